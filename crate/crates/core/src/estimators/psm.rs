use super::logistic::propensity_scores;
use super::{AceEstimate, Estimator};
use crate::dataset::RawDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PsmConfig {
    /// Maximum score distance for a match, in standard deviations of the
    /// score. Units without a match inside it are left out.
    pub caliper: Option<f64>,
}

/// Propensity-score matching estimate of the average causal effect with the
/// treatment and outcome roles of `raw`.
pub fn psm_ace(raw: &RawDataset, s: &[usize], cfg: &PsmConfig) -> Result<AceEstimate> {
    let t = raw.treatment().ok_or_else(|| Error::InvalidArgument("dataset has no treatment column".into()))?;
    let y = raw.outcome().ok_or_else(|| Error::InvalidArgument("dataset has no outcome column".into()))?;
    let treated: Vec<bool> = raw.column(t).values.iter().map(|&v| v == 1.0).collect();
    if treated.iter().all(|&b| b) || treated.iter().all(|&b| !b) {
        return Err(Error::Estimation("degenerate arms: one treatment arm is empty".into()));
    }
    let ps = propensity_scores(raw, s)?;
    psm_from_scores(&ps, &treated, &raw.column(y).values, cfg.caliper)
}

/// One treatment arm sorted by score, with prefix sums of the outcome.
struct Arm {
    /// Row indices in score order.
    rows: Vec<usize>,
    scores: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Arm {
    fn new(rows: impl Iterator<Item = usize>, ps: &[f64], y: &[f64]) -> Self {
        let mut rows: Vec<usize> = rows.collect();
        rows.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]).then(a.cmp(&b)));
        let scores = rows.iter().map(|&r| ps[r]).collect();
        let mut sum = vec![0.0; rows.len() + 1];
        let mut sum_sq = vec![0.0; rows.len() + 1];
        for (k, &r) in rows.iter().enumerate() {
            sum[k + 1] = sum[k] + y[r];
            sum_sq[k + 1] = sum_sq[k] + y[r] * y[r];
        }
        Self { rows, scores, sum, sum_sq }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn first_at_least(&self, v: f64) -> usize {
        self.scores.partition_point(|&s| s < v)
    }

    fn first_above(&self, v: f64) -> usize {
        self.scores.partition_point(|&s| s <= v)
    }

    /// Positions `[lo, hi)` of the units nearest to score `v` (all ties) and
    /// the distance.
    fn nearest(&self, v: f64) -> (usize, usize, f64) {
        let pos = self.first_at_least(v);
        let left = (pos > 0).then(|| self.scores[pos - 1]);
        let right = (pos < self.len()).then(|| self.scores[pos]);
        let dl = left.map_or(f64::INFINITY, |l| v - l);
        let dr = right.map_or(f64::INFINITY, |r| r - v);
        let d = dl.min(dr);
        let lo = if dl == d { self.first_at_least(left.expect("finite distance")) } else { pos };
        let hi = if dr == d { self.first_above(right.expect("finite distance")) } else { pos };
        (lo, hi, d)
    }

    fn range_sums(&self, lo: usize, hi: usize) -> (f64, f64) {
        (self.sum[hi] - self.sum[lo], self.sum_sq[hi] - self.sum_sq[lo])
    }
}

/// Matching estimator on precomputed scores.
///
/// Every unit is matched with replacement to the opposite-arm units nearest in
/// score; tied nearest units are averaged. The variance follows Abadie and
/// Imbens for matching with replacement, with the conditional outcome variance
/// estimated from the nearest same-arm unit(s).
pub fn psm_from_scores(ps: &[f64], treated: &[bool], y: &[f64], caliper: Option<f64>) -> Result<AceEstimate> {
    let n = ps.len();
    if treated.len() != n || y.len() != n {
        return Err(Error::Estimation("score, treatment and outcome lengths differ".into()));
    }
    let arms = [
        Arm::new((0..n).filter(|&i| !treated[i]), ps, y),
        Arm::new((0..n).filter(|&i| treated[i]), ps, y),
    ];
    if arms[0].len() == 0 || arms[1].len() == 0 {
        return Err(Error::Estimation("degenerate arms: one treatment arm is empty".into()));
    }
    let max_dist = caliper.map(|c| {
        let mean = ps.iter().sum::<f64>() / n as f64;
        let var = ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        c * var.sqrt()
    });

    // usage weights K, accumulated as a difference array over sorted positions
    let mut k_diff = [vec![0.0; arms[0].len() + 1], vec![0.0; arms[1].len() + 1]];
    let mut effects: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let own = usize::from(treated[i]);
        let other = &arms[1 - own];
        let (lo, hi, d) = other.nearest(ps[i]);
        if max_dist.is_some_and(|m| d > m) {
            continue;
        }
        let m = (hi - lo) as f64;
        let imputed = other.range_sums(lo, hi).0 / m;
        effects.push(if treated[i] { y[i] - imputed } else { imputed - y[i] });
        k_diff[1 - own][lo] += 1.0 / m;
        k_diff[1 - own][hi] -= 1.0 / m;
    }
    let n_used = effects.len();
    if n_used == 0 {
        return Err(Error::Estimation("no unit has a match within the caliper".into()));
    }
    let tau = effects.iter().sum::<f64>() / n_used as f64;
    let mut v = effects.iter().map(|e| (e - tau).powi(2)).sum::<f64>();

    for (a, arm) in arms.iter().enumerate() {
        let mut k = 0.0;
        for pos in 0..arm.len() {
            k += k_diff[a][pos];
            if k <= 1e-12 {
                continue;
            }
            let i = arm.rows[pos];
            v += (k * k + k) * own_arm_variance(arm, pos, y[i]);
        }
    }
    let nf = n_used as f64;
    let se = (v / (nf * nf)).sqrt();
    Ok(AceEstimate::new(Estimator::Psm, tau, se, n_used))
}

/// `½ (y_i - y_l)²` averaged over the nearest other unit(s) `l` of the same
/// arm; 0 for a singleton arm.
fn own_arm_variance(arm: &Arm, pos: usize, yi: f64) -> f64 {
    let v = arm.scores[pos];
    let g0 = arm.first_at_least(v);
    let g1 = arm.first_above(v);
    let (s1, s2, m) = if g1 - g0 > 1 {
        let (s1, s2) = arm.range_sums(g0, g1);
        (s1 - yi, s2 - yi * yi, (g1 - g0 - 1) as f64)
    } else {
        if arm.len() == 1 {
            return 0.0;
        }
        let dl = if g0 > 0 { v - arm.scores[g0 - 1] } else { f64::INFINITY };
        let dr = if g1 < arm.len() { arm.scores[g1] - v } else { f64::INFINITY };
        let d = dl.min(dr);
        let lo = if dl == d { arm.first_at_least(arm.scores[g0 - 1]) } else { g0 };
        let hi = if dr == d { arm.first_above(arm.scores[g1]) } else { g1 };
        let (a1, a2) = arm.range_sums(lo, g0);
        let (b1, b2) = arm.range_sums(g1, hi);
        (a1 + b1, a2 + b2, ((g0 - lo) + (hi - g1)) as f64)
    };
    (0.5 * (s2 - 2.0 * yi * s1 + m * yi * yi) / m).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(n²) implementation of the same estimator.
    fn naive(ps: &[f64], t: &[bool], y: &[f64]) -> (f64, f64) {
        let n = ps.len();
        let nearest = |i: usize, arm: bool, skip_self: bool| -> Vec<usize> {
            let cands: Vec<usize> = (0..n).filter(|&j| t[j] == arm && !(skip_self && j == i)).collect();
            let d = cands.iter().map(|&j| (ps[i] - ps[j]).abs()).fold(f64::INFINITY, f64::min);
            cands.into_iter().filter(|&j| (ps[i] - ps[j]).abs() == d).collect()
        };
        let mut k = vec![0.0; n];
        let mut eff = Vec::new();
        for i in 0..n {
            let m = nearest(i, !t[i], false);
            let imp = m.iter().map(|&j| y[j]).sum::<f64>() / m.len() as f64;
            for &j in &m {
                k[j] += 1.0 / m.len() as f64;
            }
            eff.push(if t[i] { y[i] - imp } else { imp - y[i] });
        }
        let tau = eff.iter().sum::<f64>() / n as f64;
        let mut v: f64 = eff.iter().map(|e| (e - tau).powi(2)).sum();
        for i in 0..n {
            if k[i] > 0.0 {
                let l = nearest(i, t[i], true);
                let s2 = l.iter().map(|&j| 0.5 * (y[i] - y[j]).powi(2)).sum::<f64>() / l.len() as f64;
                v += (k[i] * k[i] + k[i]) * s2;
            }
        }
        (tau, (v / (n * n) as f64).sqrt())
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn matches_the_quadratic_implementation() {
        let mut seed = 11;
        for case in 0..30 {
            let n = 20 + case * 3;
            // coarse scores force plenty of ties
            let ps: Vec<f64> = (0..n).map(|_| (lcg(&mut seed) * 8.0).floor() / 8.0 + 0.03).collect();
            let t: Vec<bool> = (0..n).map(|i| i % 3 != 0 && lcg(&mut seed) < 0.6 || i == 1).collect();
            let y: Vec<f64> = (0..n).map(|i| ps[i] * 3.0 + lcg(&mut seed) + f64::from(u8::from(t[i]))).collect();
            let est = psm_from_scores(&ps, &t, &y, None).unwrap();
            let (tau, se) = naive(&ps, &t, &y);
            assert!((est.beta_hat - tau).abs() < 1e-10, "case {case}");
            assert!((est.se - se).abs() < 1e-10, "case {case}: {} vs {se}", est.se);
        }
    }

    #[test]
    fn outcome_equal_to_treatment_gives_one() {
        let ps: Vec<f64> = (0..50).map(|i| (i as f64 + 0.5) / 50.0).collect();
        let t: Vec<bool> = (0..50).map(|i| i % 2 == 0).collect();
        let y: Vec<f64> = t.iter().map(|&b| f64::from(u8::from(b))).collect();
        let e = psm_from_scores(&ps, &t, &y, None).unwrap();
        assert_eq!(e.beta_hat, 1.0);
    }

    #[test]
    fn constant_scores_give_difference_in_means() {
        let t = [true, false, true, true, false, false, true];
        let y = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.6];
        let ps = [0.4; 7];
        let e = psm_from_scores(&ps, &t, &y, None).unwrap();
        let m1 = (3.0 + 4.0 + 1.5 + 2.6) / 4.0;
        let m0 = (1.0 + 5.0 + 9.0) / 3.0;
        assert!((e.beta_hat - (m1 - m0)).abs() < 1e-12);
    }

    #[test]
    fn rescaled_scores_give_the_same_estimate() {
        let mut seed = 5;
        let n = 80;
        let ps: Vec<f64> = (0..n).map(|_| lcg(&mut seed) * 0.8 + 0.1).collect();
        let t: Vec<bool> = (0..n).map(|i| lcg(&mut seed) < ps[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| 2.0 * ps[i] + lcg(&mut seed)).collect();
        let a = psm_from_scores(&ps, &t, &y, None).unwrap();
        let scaled: Vec<f64> = ps.iter().map(|p| p * 4.0).collect();
        assert_eq!(a, psm_from_scores(&scaled, &t, &y, None).unwrap());
    }

    #[test]
    fn empty_arm_is_an_error() {
        let err = psm_from_scores(&[0.5, 0.5], &[true, true], &[1.0, 2.0], None).unwrap_err();
        assert!(err.to_string().contains("degenerate arms"));
    }

    #[test]
    fn caliper_drops_far_units() {
        let ps = [0.1, 0.11, 0.9, 0.5, 0.52];
        let t = [true, false, true, true, false];
        let y = [1.0, 0.0, 5.0, 2.0, 1.0];
        let e = psm_from_scores(&ps, &t, &y, Some(0.2)).unwrap();
        assert_eq!(e.n_used, 4);
        assert!(psm_from_scores(&ps, &t, &y, None).unwrap().n_used == 5);
    }
}
