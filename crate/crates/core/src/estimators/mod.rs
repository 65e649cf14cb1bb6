//! Average causal effect estimators given a selected covariate set.

mod logistic;
mod psm;
mod tmle;

pub use logistic::{fit_logistic, fit_logistic_design, propensity_scores, Design, LogisticModel};
pub use psm::{psm_ace, psm_from_scores, PsmConfig};
pub use tmle::{tmle_ace, tmle_ace_detailed, TmleConfig, TmleFit};

/// Normal quantile used for 95% intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Psm,
    Tmle,
}

impl Estimator {
    pub const ALL: [Estimator; 2] = [Estimator::Psm, Estimator::Tmle];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Psm => "psm",
            Estimator::Tmle => "tmle",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "psm" => Ok(Estimator::Psm),
            "tmle" => Ok(Estimator::Tmle),
            other => Err(format!("unknown estimator {other:?} (expected psm or tmle)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AceEstimate {
    pub estimator: Estimator,
    pub beta_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_used: usize,
}

impl AceEstimate {
    pub fn new(estimator: Estimator, beta_hat: f64, se: f64, n_used: usize) -> Self {
        Self { estimator, beta_hat, se, ci_low: beta_hat - Z_95 * se, ci_high: beta_hat + Z_95 * se, n_used }
    }

    pub fn covers(&self, beta: f64) -> bool {
        self.ci_low <= beta && beta <= self.ci_high
    }

    pub const CSV_HEADER: &'static str = "estimator,set,cardinality,beta_hat,se,ci_low,ci_high";

    pub fn to_csv_row(&self, set: &str, cardinality: usize) -> String {
        format!(
            "{},{},{},{:?},{:?},{:?},{:?}",
            self.estimator.as_str(),
            set,
            cardinality,
            self.beta_hat,
            self.se,
            self.ci_low,
            self.ci_high
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_is_symmetric() {
        let e = AceEstimate::new(Estimator::Tmle, 2.0, 0.5, 10);
        assert_eq!((e.ci_low, e.ci_high), (2.0 - 0.98, 2.0 + 0.98));
        assert!(e.covers(2.5) && !e.covers(3.0));
        assert_eq!(e.to_csv_row("xt", 3), "tmle,xt,3,2.0,0.5,1.02,2.98");
    }
}
