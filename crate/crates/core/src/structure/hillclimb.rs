use std::collections::BTreeSet;

use super::score::{ScoreCache, ScoreKind};
use crate::dataset::DiscreteDataset;
use crate::graphs::{Dag, Skeleton};

/// Improvements at or below this are treated as no improvement; it also
/// decides ties between moves, so near-equal gains fall back to move order.
const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HillClimbConfig {
    pub score: ScoreKind,
    pub max_iter: usize,
    /// Vertices that may never be the source of an edge.
    pub forbidden_children: BTreeSet<usize>,
}

impl Default for HillClimbConfig {
    fn default() -> Self {
        Self { score: ScoreKind::Aic, max_iter: 10_000, forbidden_children: BTreeSet::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HillClimbOutcome {
    pub dag: Dag,
    pub score: f64,
    /// Total score of the starting DAG followed by the score after each move.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum MoveKind {
    Delete,
    Reverse,
    Add,
}

/// Greedy ascent from the empty DAG over the columns of `data`, adding edges
/// only along `skeleton`.
pub fn hill_climb(data: &DiscreteDataset, skeleton: &Skeleton, cfg: &HillClimbConfig) -> Dag {
    hill_climb_traced(data, skeleton, cfg).dag
}

/// # Panics
/// If the skeleton and data disagree on the number of vertices, or
/// `max_iter` is zero.
pub fn hill_climb_traced(data: &DiscreteDataset, skeleton: &Skeleton, cfg: &HillClimbConfig) -> HillClimbOutcome {
    assert_eq!(skeleton.p(), data.n_vars(), "skeleton and data must cover the same vertices");
    assert!(cfg.max_iter >= 1, "max_iter must be at least 1");
    let p = data.n_vars();
    let names: Vec<String> = (0..p).map(|v| data.name(v).to_string()).collect();
    let mut dag = Dag::new(names);
    let mut cache = ScoreCache::new(data, cfg.score);
    let mut local: Vec<f64> = (0..p).map(|v| cache.score(v, [])).collect();
    let mut trace = vec![local.iter().sum::<f64>()];

    let mut additions: Vec<(usize, usize)> = skeleton
        .edges()
        .into_iter()
        .flat_map(|(a, b)| [(a, b), (b, a)])
        .filter(|(src, _)| !cfg.forbidden_children.contains(src))
        .collect();
    additions.sort_unstable();

    for _ in 0..cfg.max_iter {
        // (gain, kind, src, dst, new local score of dst, new local score of src when reversing)
        let mut best: Option<(f64, MoveKind, usize, usize, f64, f64)> = None;
        let mut consider = |gain: f64, kind, src, dst, new_dst, new_src| {
            let better = match &best {
                None => gain > TOLERANCE,
                Some(b) => gain > b.0 + TOLERANCE,
            };
            if better {
                best = Some((gain, kind, src, dst, new_dst, new_src));
            }
        };

        let edges = dag.edges();
        for &(a, b) in &edges {
            let pa_b = dag.parents(b).iter().copied().filter(|&u| u != a);
            let s = cache.score(b, pa_b);
            consider(s - local[b], MoveKind::Delete, a, b, s, f64::NAN);
        }
        for &(a, b) in &edges {
            if cfg.forbidden_children.contains(&b) {
                continue;
            }
            dag.remove_edge(a, b);
            let cyclic = dag.has_path(a, b);
            dag.add_edge(a, b).expect("restoring an existing edge");
            if cyclic {
                continue;
            }
            let s_b = cache.score(b, dag.parents(b).iter().copied().filter(|&u| u != a));
            let s_a = cache.score(a, dag.parents(a).iter().copied().chain([b]));
            consider(s_b - local[b] + s_a - local[a], MoveKind::Reverse, a, b, s_b, s_a);
        }
        for &(a, b) in &additions {
            if dag.has_edge(a, b) || dag.has_edge(b, a) || dag.has_path(b, a) {
                continue;
            }
            let s = cache.score(b, dag.parents(b).iter().copied().chain([a]));
            consider(s - local[b], MoveKind::Add, a, b, s, f64::NAN);
        }

        let Some((_, kind, a, b, new_b, new_a)) = best else { break };
        match kind {
            MoveKind::Delete => {
                dag.remove_edge(a, b);
                local[b] = new_b;
            }
            MoveKind::Reverse => {
                dag.remove_edge(a, b);
                dag.add_edge(b, a).expect("reversal was checked for cycles");
                local[b] = new_b;
                local[a] = new_a;
            }
            MoveKind::Add => {
                dag.add_edge(a, b).expect("addition was checked for cycles");
                local[b] = new_b;
            }
        }
        trace.push(local.iter().sum());
    }

    let score = *trace.last().expect("trace starts non-empty");
    HillClimbOutcome { dag, score, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::score::{local_score, total_score};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn complete(p: usize) -> Skeleton {
        let mut s = Skeleton::new(p);
        for a in 0..p {
            for b in a + 1..p {
                s.add_edge(a, b);
            }
        }
        s
    }

    /// a -> b -> c with strong noisy copying.
    fn chain_data(n: usize, seed: u64) -> DiscreteDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols: Vec<Vec<u32>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
        for _ in 0..n {
            let a: u32 = rng.random_range(0..2);
            let b = if rng.random::<f64>() < 0.85 { a } else { 1 - a };
            let c = if rng.random::<f64>() < 0.85 { b } else { 1 - b };
            cols[0].push(a);
            cols[1].push(b);
            cols[2].push(c);
        }
        DiscreteDataset::from_codes(cols).unwrap()
    }

    /// Every DAG on 3 labelled vertices: each of the 3 pairs is absent or
    /// oriented either way, minus the 2 directed cycles.
    fn all_dags_3() -> Vec<Dag> {
        let pairs = [(0, 1), (0, 2), (1, 2)];
        let mut out = Vec::new();
        for code in 0..27 {
            let mut dag = Dag::with_size(3);
            let mut ok = true;
            let mut c = code;
            for &(a, b) in &pairs {
                let r = match c % 3 {
                    0 => Ok(()),
                    1 => dag.add_edge(a, b),
                    _ => dag.add_edge(b, a),
                };
                ok &= r.is_ok();
                c /= 3;
            }
            if ok {
                out.push(dag);
            }
        }
        out
    }

    fn neighbors(dag: &Dag) -> Vec<Dag> {
        let mut out = Vec::new();
        for a in 0..3 {
            for b in 0..3 {
                if a == b {
                    continue;
                }
                let mut d = dag.clone();
                if dag.has_edge(a, b) {
                    d.remove_edge(a, b);
                    out.push(d.clone());
                    if d.add_edge(b, a).is_ok() {
                        out.push(d);
                    }
                } else if !dag.has_edge(b, a) && d.add_edge(a, b).is_ok() {
                    out.push(d);
                }
            }
        }
        out
    }

    #[test]
    fn there_are_25_dags_on_3_vertices() {
        assert_eq!(all_dags_3().len(), 25);
    }

    #[test]
    fn edgeless_skeleton_gives_empty_dag() {
        let data = chain_data(500, 1);
        let dag = hill_climb(&data, &Skeleton::new(3), &HillClimbConfig::default());
        assert_eq!(dag.n_edges(), 0);
    }

    #[test]
    fn chain_is_recovered_and_locally_optimal() {
        let data = chain_data(2000, 7);
        let out = hill_climb_traced(&data, &complete(3), &HillClimbConfig::default());
        assert_eq!(out.dag.skeleton().edges(), vec![(0, 1), (1, 2)]);

        let scores: Vec<(Dag, f64)> =
            all_dags_3().into_iter().map(|d| { let s = total_score(&data, &d, ScoreKind::Aic); (d, s) }).collect();
        let local_optima: Vec<f64> = scores
            .iter()
            .filter(|(d, s)| neighbors(d).iter().all(|nb| total_score(&data, nb, ScoreKind::Aic) <= s + 1e-9))
            .map(|(_, s)| *s)
            .collect();
        assert!(local_optima.iter().any(|s| (s - out.score).abs() < 1e-8), "{} not in {local_optima:?}", out.score);
        assert!((total_score(&data, &out.dag, ScoreKind::Aic) - out.score).abs() < 1e-8);
    }

    #[test]
    fn trace_is_monotone_and_edges_stay_in_skeleton() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 400;
            let base: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let cols: Vec<Vec<u32>> = (0..5)
                .map(|j| base.iter().map(|&b| if rng.random::<f64>() < 0.3 + 0.1 * j as f64 { b } else { rng.random_range(0..3) }).collect())
                .collect();
            let data = DiscreteDataset::from_codes(cols).unwrap();
            let mut skel = complete(5);
            skel.remove_edge(0, 4);
            skel.remove_edge(1, 3);
            let cfg = HillClimbConfig { forbidden_children: BTreeSet::from([2]), ..Default::default() };
            let out = hill_climb_traced(&data, &skel, &cfg);
            assert!(out.trace.windows(2).all(|w| w[1] >= w[0]));
            assert!(out.dag.is_acyclic());
            assert!(out.dag.children(2).is_empty());
            for (a, b) in out.dag.edges() {
                assert!(skel.adjacent(a, b));
            }
            assert_eq!(hill_climb_traced(&data, &skel, &cfg), out);
        }
    }

    #[test]
    fn independent_parent_is_not_added() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cols: Vec<Vec<u32>> = (0..2).map(|_| (0..3000).map(|_| rng.random_range(0..3)).collect()).collect();
        let data = DiscreteDataset::from_codes(cols).unwrap();
        let base = local_score(&data, 1, &[], ScoreKind::Aic);
        assert!(local_score(&data, 1, &[0], ScoreKind::Aic) < base);
        assert_eq!(hill_climb(&data, &complete(2), &HillClimbConfig::default()).n_edges(), 0);
    }

    #[test]
    fn max_iter_bounds_the_moves() {
        let data = chain_data(2000, 7);
        let cfg = HillClimbConfig { max_iter: 1, ..Default::default() };
        let out = hill_climb_traced(&data, &complete(3), &cfg);
        assert_eq!(out.dag.n_edges(), 1);
        assert_eq!(out.trace.len(), 2);
    }
}
