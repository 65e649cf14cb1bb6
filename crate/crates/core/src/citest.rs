//! Conditional-independence testing.
//!
//! The empirical test uses the plug-in mutual information between two
//! discrete variables within strata of a conditioning set. `2n * MI` is the G²
//! likelihood-ratio statistic and is referred to a χ² distribution.
//!
//! Anything that answers "is `i` independent of `j` given `K`?" implements
//! [`CiOracle`]; the structure learners only talk to that trait, so a
//! d-separation oracle can stand in for data.

use statrs::function::gamma::gamma_ur;

use crate::dataset::{contingency, ContingencyTable, DiscreteDataset};

/// Source of conditional-independence verdicts over integer-indexed variables.
pub trait CiOracle: Sync {
    fn independent(&self, i: usize, j: usize, cond: &[usize]) -> bool;

    /// Strength of evidence against independence, smaller is stronger. The
    /// default only knows the verdict: 1 when independent, 0 otherwise.
    fn p_value(&self, i: usize, j: usize, cond: &[usize]) -> f64 {
        if self.independent(i, j, cond) {
            1.0
        } else {
            0.0
        }
    }
}

impl<O: CiOracle + ?Sized> CiOracle for &O {
    fn independent(&self, i: usize, j: usize, cond: &[usize]) -> bool {
        (**self).independent(i, j, cond)
    }

    fn p_value(&self, i: usize, j: usize, cond: &[usize]) -> f64 {
        (**self).p_value(i, j, cond)
    }
}

/// Wraps an oracle so every query additionally conditions on `extra`.
///
/// Conditioning a d-separation oracle on the treatment vertex reproduces what
/// physically restricting data to one treatment arm does.
pub struct ConditionedOracle<O> {
    inner: O,
    extra: Vec<usize>,
}

impl<O: CiOracle> ConditionedOracle<O> {
    pub fn new(inner: O, extra: Vec<usize>) -> Self {
        Self { inner, extra }
    }
}

impl<O: CiOracle> ConditionedOracle<O> {
    fn extend(&self, i: usize, j: usize, cond: &[usize]) -> Vec<usize> {
        let mut k = cond.to_vec();
        for &e in &self.extra {
            if e != i && e != j && !k.contains(&e) {
                k.push(e);
            }
        }
        k
    }
}

impl<O: CiOracle> CiOracle for ConditionedOracle<O> {
    fn independent(&self, i: usize, j: usize, cond: &[usize]) -> bool {
        self.inner.independent(i, j, &self.extend(i, j, cond))
    }

    fn p_value(&self, i: usize, j: usize, cond: &[usize]) -> f64 {
        self.inner.p_value(i, j, &self.extend(i, j, cond))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiTestResult {
    pub mi_hat: f64,
    pub g2: f64,
    pub df: usize,
    pub p_value: f64,
    pub independent: bool,
    /// The sample-size guard fired and the verdict was not computed from the
    /// χ² reference.
    pub underpowered: bool,
}

/// Plug-in conditional mutual information (nats) and adjusted degrees of
/// freedom for a contingency table.
///
/// Empty strata never appear in the table. Within each stratum the
/// `(A-1)(B-1)` contribution uses the numbers of levels of `i` and `j` that
/// were actually observed in that stratum.
pub fn mi_statistic(table: &ContingencyTable) -> (f64, usize) {
    if table.n == 0 {
        return (0.0, 0);
    }
    let (al, bl) = (table.a_levels, table.b_levels);
    let mut sum = 0.0;
    let mut df = 0usize;
    for s in 0..table.strata() {
        let nk = f64::from(table.n_k[s]);
        if table.n_k[s] == 0 {
            continue;
        }
        let nik = &table.n_ik[s * al..(s + 1) * al];
        let njk = &table.n_jk[s * bl..(s + 1) * bl];
        for a in 0..al {
            if nik[a] == 0 {
                continue;
            }
            for b in 0..bl {
                let c = table.cell(s, a, b);
                if c == 0 {
                    continue;
                }
                let c = f64::from(c);
                sum += c * (c.ln() + nk.ln() - f64::from(nik[a]).ln() - f64::from(njk[b]).ln());
            }
        }
        let a_obs = nik.iter().filter(|&&v| v > 0).count();
        let b_obs = njk.iter().filter(|&&v| v > 0).count();
        df += a_obs.saturating_sub(1) * b_obs.saturating_sub(1);
    }
    let mi = (sum / table.n as f64).max(0.0);
    (if df == 0 { 0.0 } else { mi }, df)
}

/// Upper tail `P(χ²_df >= x)`.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if df == 0 || x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiConfig {
    pub alpha: f64,
    /// Minimum average number of observations per table cell required to run
    /// the test; below it the pair is declared independent. `None` disables
    /// the guard.
    pub min_obs_per_cell: Option<f64>,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self { alpha: 0.05, min_obs_per_cell: None }
    }
}

/// Mutual-information test of `i ⟂ j | cond` at level `alpha` with no
/// sample-size guard.
///
/// # Panics
/// If `alpha` is not in (0, 1) or the variable indices violate the
/// contingency preconditions.
pub fn ci_test(data: &DiscreteDataset, i: usize, j: usize, cond: &[usize], alpha: f64) -> CiTestResult {
    ci_test_with(data, i, j, cond, &CiConfig { alpha, min_obs_per_cell: None })
}

pub fn ci_test_with(data: &DiscreteDataset, i: usize, j: usize, cond: &[usize], cfg: &CiConfig) -> CiTestResult {
    assert!(cfg.alpha > 0.0 && cfg.alpha < 1.0, "alpha must lie in (0, 1), got {}", cfg.alpha);
    let table = contingency(data, i, j, cond).expect("ci_test preconditions");
    let (mi_hat, df) = mi_statistic(&table);
    let g2 = 2.0 * table.n as f64 * mi_hat;
    if df == 0 {
        return CiTestResult { mi_hat, g2, df, p_value: 1.0, independent: true, underpowered: false };
    }
    if let Some(per_cell) = cfg.min_obs_per_cell {
        let cells = table.a_levels * table.b_levels * table.strata();
        if (table.n as f64) < per_cell * cells as f64 {
            return CiTestResult { mi_hat, g2, df, p_value: 1.0, independent: true, underpowered: true };
        }
    }
    let p_value = chi2_sf(g2, df);
    CiTestResult { mi_hat, g2, df, p_value, independent: p_value > cfg.alpha, underpowered: false }
}

/// [`CiOracle`] backed by the mutual-information test on a dataset.
#[derive(Debug, Clone, Copy)]
pub struct MiTest<'a> {
    data: &'a DiscreteDataset,
    cfg: CiConfig,
}

impl<'a> MiTest<'a> {
    pub fn new(data: &'a DiscreteDataset, cfg: CiConfig) -> Self {
        assert!(cfg.alpha > 0.0 && cfg.alpha < 1.0, "alpha must lie in (0, 1)");
        Self { data, cfg }
    }

    pub fn data(&self) -> &'a DiscreteDataset {
        self.data
    }

    pub fn test(&self, i: usize, j: usize, cond: &[usize]) -> CiTestResult {
        ci_test_with(self.data, i, j, cond, &self.cfg)
    }
}

impl CiOracle for MiTest<'_> {
    fn independent(&self, i: usize, j: usize, cond: &[usize]) -> bool {
        self.test(i, j, cond).independent
    }

    /// The test's p-value, or 1 when the verdict is independence without one
    /// (guard fired or no degrees of freedom).
    fn p_value(&self, i: usize, j: usize, cond: &[usize]) -> f64 {
        let r = self.test(i, j, cond);
        if r.independent && r.p_value <= self.cfg.alpha {
            1.0
        } else {
            r.p_value
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ContingencyTable;

    /// Adaptive Simpson quadrature of the χ² density over `[x, x + 400]`.
    fn chi2_sf_quadrature(x: f64, df: usize) -> f64 {
        let k = df as f64 / 2.0;
        let ln_norm = -(k * 2f64.ln() + statrs::function::gamma::ln_gamma(k));
        let pdf = |t: f64| if t <= 0.0 { 0.0 } else { (ln_norm + (k - 1.0) * t.ln() - t / 2.0).exp() };
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
                return left + right + (left + right - whole) / 15.0;
            }
            simpson(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
        }
        let (a, b) = (x, x + 400.0);
        let (fa, fb, fm) = (pdf(a), pdf(b), pdf(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        simpson(&pdf, a, b, fa, fm, fb, whole, 1e-13, 50)
    }

    #[test]
    fn quadrature_oracle_agrees_with_sf() {
        for &(x, df) in &[(3.841459, 1), (20.93, 1), (1.0, 3), (12.5, 4), (30.0, 12), (0.3, 2)] {
            let q = chi2_sf_quadrature(x, df);
            assert!((chi2_sf(x, df) - q).abs() < 1e-10, "x={x} df={df}: {} vs {q}", chi2_sf(x, df));
        }
    }

    #[test]
    fn sf_reference_points() {
        assert_eq!(chi2_sf(0.0, 5), 1.0);
        assert_eq!(chi2_sf(7.0, 0), 1.0);
        assert!((chi2_sf(3.841459, 1) - 0.05).abs() < 1e-6);
        // frozen from the quadrature oracle
        let tail = chi2_sf(20.93, 1);
        assert!((tail - 4.763_753_835_565_581e-6).abs() < 1e-12, "{tail}");
    }

    #[test]
    fn mi_of_dependent_two_by_two() {
        // oracle: (1/80) * sum n ln(n * N / (row * col)); rows and cols all 40
        let t = ContingencyTable::from_counts(2, 2, vec![30, 10, 10, 30]);
        let (mi, df) = mi_statistic(&t);
        let expect = (2.0 * 30.0 * (30.0f64 * 80.0 / 1600.0).ln() + 2.0 * 10.0 * (10.0f64 * 80.0 / 1600.0).ln()) / 80.0;
        assert!((mi - expect).abs() < 1e-14);
        assert!((mi - 0.130812).abs() < 1e-6, "{mi}");
        assert!((2.0 * 80.0 * mi - 20.9300).abs() < 1e-4);
        assert_eq!(df, 1);
    }

    #[test]
    fn mi_of_independent_table_is_zero() {
        let t = ContingencyTable::from_counts(2, 2, vec![25, 25, 25, 25]);
        let (mi, df) = mi_statistic(&t);
        assert!(mi.abs() < 1e-15);
        assert_eq!(df, 1);
    }

    #[test]
    fn df_counts_observed_strata() {
        // two binary conditioning variables, all four configurations present
        let t = ContingencyTable::from_counts(2, 2, vec![3, 1, 2, 4, 1, 1, 2, 2, 5, 1, 1, 1, 2, 3, 3, 2]);
        assert_eq!(mi_statistic(&t).1, 4);
    }

    #[test]
    fn df_shrinks_for_sparse_strata() {
        // stratum 0 full, stratum 1 has only one level of i observed
        let t = ContingencyTable::from_counts(2, 3, vec![2, 2, 2, 3, 1, 1, 4, 5, 6, 0, 0, 0]);
        assert_eq!(mi_statistic(&t).1, 2);
    }

    #[test]
    fn copy_is_dependent_constant_is_independent() {
        let x: Vec<u32> = (0..200).map(|r| (r * 7 % 3) as u32).collect();
        let d = DiscreteDataset::from_codes(vec![x.clone(), x, vec![0; 200]]).unwrap();
        let r = ci_test(&d, 0, 1, &[], 0.05);
        assert!(!r.independent);
        assert_eq!(r.g2, 2.0 * 200.0 * r.mi_hat);
        let r = ci_test(&d, 2, 0, &[], 0.05);
        assert!(r.independent);
        assert_eq!(r.df, 0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn guard_declares_underpowered_tables_independent() {
        let x: Vec<u32> = (0..40).map(|r| (r % 3) as u32).collect();
        let z: Vec<u32> = (0..40).map(|r| (r / 3 % 4) as u32).collect();
        let d = DiscreteDataset::from_codes(vec![x.clone(), x, z]).unwrap();
        let strict = CiConfig { alpha: 0.05, min_obs_per_cell: Some(5.0) };
        let r = ci_test_with(&d, 0, 1, &[2], &strict);
        assert!(r.underpowered && r.independent);
        assert!(!ci_test(&d, 0, 1, &[2], 0.05).independent);
    }

    #[test]
    fn conditioned_oracle_adds_variables() {
        struct Record;
        impl CiOracle for Record {
            fn independent(&self, _i: usize, _j: usize, cond: &[usize]) -> bool {
                cond == [3, 9]
            }
        }
        let o = ConditionedOracle::new(Record, vec![9]);
        assert!(o.independent(0, 1, &[3]));
        assert!(!o.independent(0, 9, &[3]));
    }
}
