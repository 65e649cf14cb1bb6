use super::logistic::{expit, fit_logistic_design, logit, propensity_scores, Design};
use super::{AceEstimate, Estimator};
use crate::dataset::{ColumnKind, RawDataset};
use crate::error::{Error, Result};

/// Initial outcome predictions are kept this far from 0 and 1.
const Q_BOUND: f64 = 1e-9;
const NEWTON_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmleConfig {
    /// Truncation bounds for the propensity score.
    pub g_bounds: (f64, f64),
}

impl Default for TmleConfig {
    fn default() -> Self {
        Self { g_bounds: (0.025, 0.975) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmleFit {
    pub estimate: AceEstimate,
    /// Fluctuation coefficient.
    pub epsilon: f64,
    /// `Σ H (Y* - Q*)` after the fluctuation, on the scaled outcome.
    pub score_residual: f64,
}

pub fn tmle_ace(raw: &RawDataset, s: &[usize], cfg: &TmleConfig) -> Result<AceEstimate> {
    tmle_ace_detailed(raw, s, cfg).map(|f| f.estimate)
}

/// Targeted maximum likelihood estimate with main-effects logistic models for
/// the outcome (on the [0, 1]-scaled outcome) and the treatment.
pub fn tmle_ace_detailed(raw: &RawDataset, s: &[usize], cfg: &TmleConfig) -> Result<TmleFit> {
    let t_idx = raw.treatment().ok_or_else(|| Error::InvalidArgument("dataset has no treatment column".into()))?;
    let y_idx = raw.outcome().ok_or_else(|| Error::InvalidArgument("dataset has no outcome column".into()))?;
    let n = raw.n();
    let t = &raw.column(t_idx).values;
    if t.iter().all(|&v| v == 1.0) || t.iter().all(|&v| v == 0.0) {
        return Err(Error::Estimation("degenerate arms: one treatment arm is empty".into()));
    }
    let y_col = raw.column(y_idx);
    let y = &y_col.values;
    let (lo, range) = match y_col.kind {
        ColumnKind::Factor => {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Estimation(format!("factor outcome {} is not 0/1", y_col.name)));
            }
            (0.0, if y.iter().all(|&v| v == y[0]) { 0.0 } else { 1.0 })
        }
        ColumnKind::Continuous => {
            let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi - lo)
        }
    };
    if range == 0.0 {
        return Ok(TmleFit { estimate: AceEstimate::new(Estimator::Tmle, 0.0, 0.0, n), epsilon: 0.0, score_residual: 0.0 });
    }
    let ys: Vec<f64> = y.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect();

    // initial outcome model on (T, S)
    let mut cols = vec![t_idx];
    cols.extend_from_slice(s);
    let design = Design::from_raw(raw, &cols);
    let q_model = fit_logistic_design(&design, &ys, None)?;
    let bound = |e: f64| logit(expit(e).clamp(Q_BOUND, 1.0 - Q_BOUND));
    let l_obs: Vec<f64> = q_model.eta.iter().map(|&e| bound(e)).collect();
    let l1: Vec<f64> = q_model.linear_predictor(&design.with_column_fixed(0, 1.0)).into_iter().map(bound).collect();
    let l0: Vec<f64> = q_model.linear_predictor(&design.with_column_fixed(0, 0.0)).into_iter().map(bound).collect();

    let (g_lo, g_hi) = cfg.g_bounds;
    let g: Vec<f64> = propensity_scores(raw, s)?.into_iter().map(|p| p.clamp(g_lo, g_hi)).collect();
    let h: Vec<f64> = (0..n).map(|i| if t[i] == 1.0 { 1.0 / g[i] } else { -1.0 / (1.0 - g[i]) }).collect();

    let epsilon = solve_fluctuation(&ys, &l_obs, &h);
    let q_star: Vec<f64> = (0..n).map(|i| expit(l_obs[i] + epsilon * h[i])).collect();
    let q1: Vec<f64> = (0..n).map(|i| expit(l1[i] + epsilon / g[i])).collect();
    let q0: Vec<f64> = (0..n).map(|i| expit(l0[i] - epsilon / (1.0 - g[i]))).collect();
    let nf = n as f64;
    let psi = (0..n).map(|i| q1[i] - q0[i]).sum::<f64>() / nf;
    let ic: Vec<f64> = (0..n).map(|i| h[i] * (ys[i] - q_star[i]) + q1[i] - q0[i] - psi).collect();
    let ic_mean = ic.iter().sum::<f64>() / nf;
    let ic_var = ic.iter().map(|v| (v - ic_mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let se = (ic_var / nf).sqrt() * range;
    let score_residual = (0..n).map(|i| h[i] * (ys[i] - q_star[i])).sum();
    Ok(TmleFit { estimate: AceEstimate::new(Estimator::Tmle, psi * range, se, n), epsilon, score_residual })
}

/// Root of `Σ h (y - expit(l + ε h))`, which is strictly decreasing in ε.
fn solve_fluctuation(y: &[f64], l: &[f64], h: &[f64]) -> f64 {
    let score = |e: f64| -> (f64, f64) {
        let mut s = 0.0;
        let mut d = 0.0;
        for ((&yi, &li), &hi) in y.iter().zip(l).zip(h) {
            let q = expit(li + e * hi);
            s += hi * (yi - q);
            d += hi * hi * q * (1.0 - q);
        }
        (s, d)
    };
    let tol = 1e-12 * y.len() as f64;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut e = 0.0;
    for _ in 0..NEWTON_MAX_ITER {
        let (s, d) = score(e);
        if s.abs() <= tol {
            break;
        }
        if s > 0.0 {
            lo = e;
        } else {
            hi = e;
        }
        let mut next = if d > 0.0 { e + s / d } else { f64::NAN };
        if !next.is_finite() || next <= lo || next >= hi {
            // fall back to bisection, expanding the bracket when open
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 1.0 + lo.abs(),
                (false, true) => hi - 1.0 - hi.abs(),
                (false, false) => e,
            };
        }
        if next == e {
            break;
        }
        e = next;
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RawColumn;

    fn data(x: Vec<f64>, t: Vec<f64>, y: Vec<f64>, binary_y: bool) -> RawDataset {
        let ycol = if binary_y { RawColumn::factor("Y", y) } else { RawColumn::continuous("Y", y) };
        RawDataset::new(vec![RawColumn::continuous("x", x), RawColumn::factor("T", t), ycol])
            .unwrap()
            .with_roles("T", "Y")
            .unwrap()
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn empty_set_gives_difference_in_means() {
        let t = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let y = vec![3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.6, 0.5];
        let raw = data(vec![0.0; 8], t, y, false);
        let fit = tmle_ace_detailed(&raw, &[], &TmleConfig::default()).unwrap();
        let m1 = (3.0 + 4.0 + 1.5 + 2.6) / 4.0;
        let m0 = (1.0 + 5.0 + 9.0 + 0.5) / 4.0;
        assert!((fit.estimate.beta_hat - (m1 - m0)).abs() < 1e-8, "{}", fit.estimate.beta_hat);
    }

    #[test]
    fn outcome_equal_to_treatment() {
        let mut seed = 3;
        let x: Vec<f64> = (0..200).map(|_| lcg(&mut seed)).collect();
        let t: Vec<f64> = x.iter().map(|&v| f64::from(u8::from(lcg(&mut seed) < 0.3 + 0.4 * v))).collect();
        for binary in [false, true] {
            let raw = data(x.clone(), t.clone(), t.clone(), binary);
            let e = tmle_ace(&raw, &[0], &TmleConfig::default()).unwrap();
            assert!((e.beta_hat - 1.0).abs() < 1e-6, "{}", e.beta_hat);
        }
    }

    #[test]
    fn fluctuation_solves_its_score() {
        let mut seed = 17;
        let n = 1000;
        let x: Vec<f64> = (0..n).map(|_| lcg(&mut seed) * 2.0 - 1.0).collect();
        let t: Vec<f64> = x.iter().map(|&v| f64::from(u8::from(lcg(&mut seed) < expit(1.5 * v)))).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * t[i] + 3.0 * x[i] * x[i] + lcg(&mut seed)).collect();
        let raw = data(x, t, y, false);
        let fit = tmle_ace_detailed(&raw, &[0], &TmleConfig::default()).unwrap();
        assert!(fit.score_residual.abs() <= 1e-6 * n as f64);
        assert!(fit.epsilon != 0.0);
        assert!((fit.estimate.beta_hat - 2.0).abs() < 0.3, "{}", fit.estimate.beta_hat);
        assert!(fit.estimate.se > 0.0);
    }

    #[test]
    fn constant_outcome_gives_zero() {
        let raw = data(vec![0.1, 0.2, 0.3, 0.4], vec![0.0, 1.0, 0.0, 1.0], vec![5.0; 4], false);
        let e = tmle_ace(&raw, &[0], &TmleConfig::default()).unwrap();
        assert_eq!((e.beta_hat, e.se), (0.0, 0.0));
    }
}
