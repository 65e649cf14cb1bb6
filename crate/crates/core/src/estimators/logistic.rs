use nalgebra::{DMatrix, DVector};

use crate::dataset::{ColumnKind, RawDataset};
use crate::error::{Error, Result};

const MAX_ITER: usize = 50;
const REL_TOL: f64 = 1e-10;
const RIDGE: f64 = 1e-8;
const SEPARATION_COEF: f64 = 15.0;
/// Relative residual norm below which a column counts as aliased.
const ALIAS_TOL: f64 = 1e-7;

/// Row-major regressor matrix without the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n: usize,
    pub names: Vec<String>,
    /// `values[row * k + col]`
    pub values: Vec<f64>,
}

impl Design {
    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn empty(n: usize) -> Self {
        Self { n, names: Vec::new(), values: Vec::new() }
    }

    /// Continuous columns enter as they are; a factor with levels
    /// `l0 < l1 < ...` enters as indicators of `l1, l2, ...`.
    pub fn from_raw(raw: &RawDataset, cols: &[usize]) -> Self {
        let n = raw.n();
        let mut names = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for &c in cols {
            let col = raw.column(c);
            match col.kind {
                ColumnKind::Continuous => {
                    names.push(col.name.clone());
                    columns.push(col.values.clone());
                }
                ColumnKind::Factor => {
                    let mut levels = col.values.clone();
                    levels.sort_by(f64::total_cmp);
                    levels.dedup();
                    for &lv in levels.iter().skip(1) {
                        names.push(format!("{}={}", col.name, lv));
                        columns.push(col.values.iter().map(|&v| f64::from(u8::from(v == lv))).collect());
                    }
                }
            }
        }
        Self::from_columns(n, names, &columns)
    }

    pub fn from_columns(n: usize, names: Vec<String>, columns: &[Vec<f64>]) -> Self {
        let k = columns.len();
        let mut values = vec![0.0; n * k];
        for (j, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), n, "column {j} has the wrong length");
            for (r, &v) in col.iter().enumerate() {
                values[r * k + j] = v;
            }
        }
        Self { n, names, values }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let k = self.k();
        &self.values[r * k..(r + 1) * k]
    }

    /// Copy with column `j` set to `v` in every row.
    pub fn with_column_fixed(&self, j: usize, v: f64) -> Self {
        let mut out = self.clone();
        let k = self.k();
        for r in 0..self.n {
            out.values[r * k + j] = v;
        }
        out
    }

    /// Indices of columns that are (numerically) linear combinations of the
    /// intercept and earlier columns, by modified Gram-Schmidt.
    fn aliased(&self) -> Vec<usize> {
        let n = self.n;
        let k = self.k();
        let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
        let mut dropped = Vec::new();
        for j in 0..k {
            let mut v: Vec<f64> = (0..n).map(|r| self.values[r * k + j]).collect();
            let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm0 == 0.0 || norm <= ALIAS_TOL * norm0 {
                dropped.push(j);
            } else {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        dropped
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// `(Intercept)` followed by the kept regressors.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Regressors removed as aliased.
    pub dropped: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    /// Some coefficient exceeds 15 in magnitude without convergence, or the
    /// response is constant.
    pub separation: bool,
    pub loglik: f64,
    /// Fitted linear predictor, offset included.
    pub eta: Vec<f64>,
}

impl LogisticModel {
    pub fn fitted(&self) -> Vec<f64> {
        self.eta.iter().map(|&e| expit(e)).collect()
    }

    /// Coefficient of a design column by name; 0 when the column was dropped.
    pub fn coefficient(&self, name: &str) -> f64 {
        self.names.iter().position(|n| n == name).map_or(0.0, |i| self.coefficients[i])
    }

    /// Linear predictor (without offset) for a design laid out like the one
    /// used for fitting.
    pub fn linear_predictor(&self, design: &Design) -> Vec<f64> {
        let idx: Vec<Option<usize>> =
            design.names.iter().map(|n| self.names.iter().position(|m| m == n)).collect();
        (0..design.n)
            .map(|r| {
                let row = design.row(r);
                self.coefficients[0]
                    + row.iter().zip(&idx).filter_map(|(x, i)| i.map(|i| x * self.coefficients[i])).sum::<f64>()
            })
            .collect()
    }
}

pub fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn loglik(y: &[f64], eta: &[f64]) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(&yi, &e)| {
            // log p = -log(1 + e^-eta), log(1 - p) = -log(1 + e^eta)
            let lp = -softplus(-e);
            let lq = -softplus(e);
            yi * lp + (1.0 - yi) * lq
        })
        .sum()
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic regression of `response` (0/1) on the main effects of
/// `regressors`.
pub fn fit_logistic(raw: &RawDataset, response: usize, regressors: &[usize]) -> Result<LogisticModel> {
    let y = &raw.column(response).values;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Estimation(format!("response {} is not binary", raw.column(response).name)));
    }
    fit_logistic_design(&Design::from_raw(raw, regressors), y, None)
}

/// IRLS fit with intercept on a prepared design. `y` may be fractional in
/// [0, 1]; `offset` enters the linear predictor with coefficient 1.
pub fn fit_logistic_design(design: &Design, y: &[f64], offset: Option<&[f64]>) -> Result<LogisticModel> {
    let n = design.n;
    if y.len() != n || offset.is_some_and(|o| o.len() != n) {
        return Err(Error::Estimation("response, offset and design lengths differ".into()));
    }
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Estimation("response outside [0, 1]".into()));
    }
    let aliased = design.aliased();
    let keep: Vec<usize> = (0..design.k()).filter(|j| !aliased.contains(j)).collect();
    let dropped: Vec<String> = aliased.iter().map(|&j| design.names[j].clone()).collect();
    if !dropped.is_empty() {
        log::warn!("dropping aliased regressors: {}", dropped.join(", "));
    }
    let p = keep.len() + 1;
    if n <= p {
        return Err(Error::Estimation(format!("{n} rows cannot identify {p} coefficients")));
    }
    let kd = design.k();
    let x_at = |r: usize, j: usize| if j == 0 { 1.0 } else { design.values[r * kd + keep[j - 1]] };
    let off = |r: usize| offset.map_or(0.0, |o| o[r]);

    let ybar = y.iter().sum::<f64>() / n as f64;
    let constant_response = y.iter().all(|&v| v == y[0]) && (y[0] == 0.0 || y[0] == 1.0);
    let mut beta = DVector::<f64>::zeros(p);
    if offset.is_none() {
        beta[0] = logit(ybar.clamp(1e-6, 1.0 - 1e-6));
    }
    let eta_of = |beta: &DVector<f64>| -> Vec<f64> {
        (0..n).map(|r| off(r) + (0..p).map(|j| x_at(r, j) * beta[j]).sum::<f64>()).collect()
    };
    let mut eta = eta_of(&beta);
    let mut ll = loglik(y, &eta);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=MAX_ITER {
        iterations = it;
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwz = DVector::<f64>::zeros(p);
        let mut row = vec![0.0; p];
        for r in 0..n {
            let mu = expit(eta[r]);
            let w = (mu * (1.0 - mu)).max(1e-12);
            let z = eta[r] - off(r) + (y[r] - mu) / w;
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = x_at(r, j);
            }
            for a in 0..p {
                let wa = w * row[a];
                xtwz[a] += wa * z;
                for b in a..p {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        let new_beta = solve_spd(xtwx, &xtwz)?;
        let mut new_eta = eta_of(&new_beta);
        let mut new_ll = loglik(y, &new_eta);
        // step halving guards against overshoot
        let mut step = new_beta.clone();
        let mut halvings = 0;
        while new_ll < ll - 1e-9 * ll.abs().max(1.0) && halvings < 30 {
            step = (&step + &beta) * 0.5;
            new_eta = eta_of(&step);
            new_ll = loglik(y, &new_eta);
            halvings += 1;
        }
        let change = (new_ll - ll).abs() / (new_ll.abs() + 0.1);
        beta = step;
        eta = new_eta;
        ll = new_ll;
        if change < REL_TOL {
            converged = true;
            break;
        }
    }

    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let big = coefficients.iter().any(|c| c.abs() > SEPARATION_COEF);
    let separation = constant_response || (big && !converged);
    if separation {
        log::warn!("logistic fit shows separation (coefficients diverge or the response is constant)");
    }
    let mut names = vec!["(Intercept)".to_string()];
    names.extend(keep.iter().map(|&j| design.names[j].clone()));
    Ok(LogisticModel { names, coefficients, dropped, converged, iterations, separation, loglik: ll, eta })
}

fn solve_spd(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let mut ridge = RIDGE;
    for _ in 0..8 {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += ridge;
        }
        if let Some(ch) = a.cholesky() {
            return Ok(ch.solve(rhs));
        }
        ridge *= 100.0;
    }
    Err(Error::Estimation("normal equations are not positive definite".into()))
}

/// Propensity scores `P(T = 1 | S)` from a main-effects logistic regression;
/// the treated proportion when `S` is empty.
pub fn propensity_scores(raw: &RawDataset, s: &[usize]) -> Result<Vec<f64>> {
    let t = raw.treatment().ok_or_else(|| Error::InvalidArgument("dataset has no treatment column".into()))?;
    let tv = &raw.column(t).values;
    if s.is_empty() {
        let mean = tv.iter().sum::<f64>() / tv.len() as f64;
        return Ok(vec![mean; tv.len()]);
    }
    Ok(fit_logistic(raw, t, s)?.fitted())
}
