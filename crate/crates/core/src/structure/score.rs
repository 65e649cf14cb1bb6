use std::collections::HashMap;

use crate::dataset::{stratum_ids, DiscreteDataset};
use crate::graphs::Dag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreKind {
    #[default]
    Aic,
    Bic,
    Loglik,
}

impl std::str::FromStr for ScoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(ScoreKind::Aic),
            "bic" => Ok(ScoreKind::Bic),
            "loglik" => Ok(ScoreKind::Loglik),
            other => Err(format!("unknown score {other:?} (expected aic, bic or loglik)")),
        }
    }
}

/// Penalized multinomial log-likelihood of `v` given its parents.
///
/// `k = (levels_v - 1) * prod(levels_parents)` free parameters; AIC subtracts
/// `k`, BIC subtracts `k/2 * ln n`. Parent configurations that never occur
/// contribute nothing to the likelihood.
///
/// # Panics
/// If `v` is one of `parents`.
pub fn local_score(data: &DiscreteDataset, v: usize, parents: &[usize], kind: ScoreKind) -> f64 {
    assert!(!parents.contains(&v), "vertex {v} cannot be its own parent");
    let levels = data.n_levels(v) as usize;
    let (ids, strata) = stratum_ids(data, parents);
    let mut counts = vec![0u32; strata * levels];
    for (&s, &c) in ids.iter().zip(data.codes(v)) {
        counts[s as usize * levels + c as usize] += 1;
    }
    let mut loglik = 0.0;
    for row in counts.chunks(levels) {
        let total: u32 = row.iter().sum();
        if total == 0 {
            continue;
        }
        let total = f64::from(total);
        for &c in row {
            if c > 0 {
                let c = f64::from(c);
                loglik += c * (c / total).ln();
            }
        }
    }
    let k = (levels.saturating_sub(1) as f64) * parents.iter().map(|&u| f64::from(data.n_levels(u))).product::<f64>();
    match kind {
        ScoreKind::Loglik => loglik,
        ScoreKind::Aic => loglik - k,
        ScoreKind::Bic => loglik - 0.5 * k * (data.n() as f64).ln(),
    }
}

/// Sum of local scores over every vertex of `dag`.
pub fn total_score(data: &DiscreteDataset, dag: &Dag, kind: ScoreKind) -> f64 {
    (0..dag.p())
        .map(|v| {
            let pa: Vec<usize> = dag.parents(v).iter().copied().collect();
            local_score(data, v, &pa, kind)
        })
        .sum()
}

/// Memo of local scores keyed by vertex and sorted parent set.
#[derive(Debug)]
pub struct ScoreCache<'a> {
    data: &'a DiscreteDataset,
    kind: ScoreKind,
    memo: HashMap<(usize, Vec<usize>), f64>,
}

impl<'a> ScoreCache<'a> {
    pub fn new(data: &'a DiscreteDataset, kind: ScoreKind) -> Self {
        Self { data, kind, memo: HashMap::new() }
    }

    pub fn score<I: IntoIterator<Item = usize>>(&mut self, v: usize, parents: I) -> f64 {
        let mut pa: Vec<usize> = parents.into_iter().collect();
        pa.sort_unstable();
        pa.dedup();
        let (data, kind) = (self.data, self.kind);
        *self.memo.entry((v, pa)).or_insert_with_key(|(v, pa)| local_score(data, *v, pa, kind))
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_no_parents() {
        let mut codes = vec![0u32; 60];
        codes.extend(vec![1u32; 40]);
        let data = DiscreteDataset::from_codes(vec![codes]).unwrap();
        let ll = local_score(&data, 0, &[], ScoreKind::Loglik);
        assert!((ll - (-67.301_166_700_925_65)).abs() < 1e-9, "{ll}");
        let aic = local_score(&data, 0, &[], ScoreKind::Aic);
        assert!((aic - (-68.301_166_700_925_65)).abs() < 1e-9, "{aic}");
        let bic = local_score(&data, 0, &[], ScoreKind::Bic);
        assert!((bic - (ll - 0.5 * 100f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn constant_vertex_scores_zero() {
        let data = DiscreteDataset::from_codes(vec![vec![0; 20], (0..20).map(|i| i % 3).collect()]).unwrap();
        assert_eq!(local_score(&data, 0, &[], ScoreKind::Aic), 0.0);
        assert_eq!(local_score(&data, 0, &[1], ScoreKind::Aic), 0.0);
    }

    #[test]
    fn copy_parent_explains_everything() {
        let a: Vec<u32> = (0..90).map(|i| i % 3).collect();
        let data = DiscreteDataset::from_codes(vec![a.clone(), a]).unwrap();
        assert_eq!(local_score(&data, 1, &[0], ScoreKind::Loglik), 0.0);
        // k = 2 * 3
        assert_eq!(local_score(&data, 1, &[0], ScoreKind::Aic), -6.0);
    }

    #[test]
    fn cache_matches_direct_computation() {
        let a: Vec<u32> = (0..50).map(|i| (i * 7 % 3) as u32).collect();
        let b: Vec<u32> = (0..50).map(|i| (i % 2) as u32).collect();
        let c: Vec<u32> = (0..50).map(|i| ((i / 5) % 2) as u32).collect();
        let data = DiscreteDataset::from_codes(vec![a, b, c]).unwrap();
        let mut cache = ScoreCache::new(&data, ScoreKind::Bic);
        let first = cache.score(2, [1, 0]);
        assert_eq!(first, local_score(&data, 2, &[0, 1], ScoreKind::Bic));
        assert_eq!(cache.score(2, [0, 1]), first);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn parse_score_kind() {
        assert_eq!("AIC".parse::<ScoreKind>().unwrap(), ScoreKind::Aic);
        assert!("k2".parse::<ScoreKind>().is_err());
    }
}
