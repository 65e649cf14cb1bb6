use std::collections::BTreeSet;

use crate::citest::{CiConfig, CiOracle};
use crate::graphs::Skeleton;
use crate::par::Execution;

/// Order in which phase 1 scans the candidates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum VariableOrder {
    #[default]
    Ascending,
    /// Scan in the order of this list; vertices missing from it come last in
    /// ascending order.
    Explicit(Vec<usize>),
}

impl VariableOrder {
    fn sort(&self, vs: &mut [usize]) {
        match self {
            VariableOrder::Ascending => vs.sort_unstable(),
            VariableOrder::Explicit(order) => {
                vs.sort_by_key(|v| (order.iter().position(|o| o == v).unwrap_or(usize::MAX), *v));
            }
        }
    }
}

/// How phase 1 grows the candidate blanket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Phase1 {
    /// Repeatedly admit the candidate whose weakest association with the
    /// target, over subsets of the current candidate blanket, is strongest.
    /// Candidates found independent are discarded for good.
    #[default]
    MaxMin,
    /// Single pass in `variable_order`, testing each candidate given the
    /// whole current candidate blanket.
    Ordered,
}

impl Phase1 {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase1::MaxMin => "maxmin",
            Phase1::Ordered => "ordered",
        }
    }
}

impl std::str::FromStr for Phase1 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "maxmin" | "max-min" => Ok(Phase1::MaxMin),
            "ordered" => Ok(Phase1::Ordered),
            _ => Err(format!("unknown phase-1 rule {s:?}, expected maxmin or ordered")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmpcConfig {
    pub alpha: f64,
    /// Largest conditioning set tried when searching subsets of the candidate
    /// blanket; `None` tries all subsets.
    pub max_cond_size: Option<usize>,
    pub phase1: Phase1,
    pub variable_order: VariableOrder,
    /// Sample-size guard passed on to the empirical test.
    pub min_obs_per_cell: Option<f64>,
}

impl Default for MmpcConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            max_cond_size: Some(3),
            phase1: Phase1::MaxMin,
            variable_order: VariableOrder::Ascending,
            min_obs_per_cell: None,
        }
    }
}

impl MmpcConfig {
    /// Default settings with no cap on the phase-2 conditioning sets.
    pub fn uncapped() -> Self {
        Self { max_cond_size: None, ..Self::default() }
    }

    pub fn ci_config(&self) -> CiConfig {
        CiConfig { alpha: self.alpha, min_obs_per_cell: self.min_obs_per_cell }
    }
}

/// Phases 1 and 2 for one target: the candidate Markov blanket `MB^target`.
///
/// # Panics
/// If `target` is among `candidates`.
pub fn mmpc_neighbors<O: CiOracle + ?Sized>(
    oracle: &O,
    target: usize,
    candidates: &[usize],
    cfg: &MmpcConfig,
) -> BTreeSet<usize> {
    assert!(!candidates.contains(&target), "target {target} listed among its own candidates");
    let mut order = candidates.to_vec();
    order.sort_unstable();
    order.dedup();
    cfg.variable_order.sort(&mut order);

    let mut cmb = match cfg.phase1 {
        Phase1::Ordered => {
            let mut cmb: Vec<usize> = Vec::new();
            for &j in &order {
                if !oracle.independent(target, j, &cmb) {
                    cmb.push(j);
                }
            }
            cmb
        }
        Phase1::MaxMin => max_min_forward(oracle, target, &order, cfg),
    };

    let phase1 = cmb.clone();
    for k in phase1 {
        let rest: Vec<usize> = cmb.iter().copied().filter(|&v| v != k).collect();
        let cap = cfg.max_cond_size.unwrap_or(rest.len()).min(rest.len());
        let separated = (0..=cap).any(|size| subsets_up_to(&rest, size).any(|a| oracle.independent(target, k, &a)));
        if separated {
            cmb.retain(|&v| v != k);
        }
    }
    cmb.into_iter().collect()
}

fn max_min_forward<O: CiOracle + ?Sized>(oracle: &O, target: usize, order: &[usize], cfg: &MmpcConfig) -> Vec<usize> {
    // weakest association seen so far, as the largest p-value
    let mut open: Vec<(usize, f64)> = order.iter().map(|&j| (j, oracle.p_value(target, j, &[]))).collect();
    let mut cmb: Vec<usize> = Vec::new();
    loop {
        open.retain(|&(_, p)| p <= cfg.alpha);
        let Some(best) = open.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).map(|(i, _)| i) else {
            break;
        };
        let (v, _) = open.remove(best);
        let others = cmb.clone();
        cmb.push(v);
        let cap = cfg.max_cond_size.unwrap_or(cmb.len()).min(cmb.len());
        for (j, p) in open.iter_mut() {
            // only subsets containing the newcomer are new
            'sizes: for size in 0..cap {
                for mut a in subsets_up_to(&others, size) {
                    a.push(v);
                    *p = p.max(oracle.p_value(target, *j, &a));
                    if *p > cfg.alpha {
                        break 'sizes;
                    }
                }
            }
        }
    }
    cmb
}

/// Phase 1 and 2 for every vertex, then the symmetry correction: `{i, l}` is
/// an edge iff each is in the other's candidate blanket.
pub fn mmpc_skeleton<O: CiOracle + ?Sized>(oracle: &O, vertices: &[usize], cfg: &MmpcConfig, exec: Execution) -> Skeleton {
    let p = vertices.iter().max().map_or(0, |&m| m + 1);
    let mbs = exec.map(vertices.len(), |idx| {
        let v = vertices[idx];
        let cands: Vec<usize> = vertices.iter().copied().filter(|&u| u != v).collect();
        mmpc_neighbors(oracle, v, &cands, cfg)
    });
    let mut skel = Skeleton::new(p);
    for (idx, mb) in mbs.iter().enumerate() {
        let v = vertices[idx];
        for &l in mb {
            if l > v {
                let lidx = vertices.iter().position(|&u| u == l).expect("blanket member is a vertex");
                if mbs[lidx].contains(&v) {
                    skel.add_edge(v, l);
                }
            }
        }
    }
    skel
}

/// Neighbors of `focal` in the MMPC skeleton over `{focal} ∪ candidates`.
///
/// Only the blankets needed for the symmetry check are computed.
pub fn mmpc_blanket<O: CiOracle + ?Sized>(
    oracle: &O,
    focal: usize,
    candidates: &[usize],
    cfg: &MmpcConfig,
    exec: Execution,
) -> BTreeSet<usize> {
    let mut universe = candidates.to_vec();
    universe.retain(|&v| v != focal);
    universe.sort_unstable();
    universe.dedup();
    let mb: Vec<usize> = mmpc_neighbors(oracle, focal, &universe, cfg).into_iter().collect();
    let keep = exec.map(mb.len(), |idx| {
        let l = mb[idx];
        let cands: Vec<usize> = universe.iter().copied().filter(|&u| u != l).chain(std::iter::once(focal)).collect();
        mmpc_neighbors(oracle, l, &cands, cfg).contains(&focal)
    });
    mb.into_iter().zip(keep).filter_map(|(l, k)| k.then_some(l)).collect()
}

/// All `size`-element subsets of `items`, in lexicographic order of positions.
pub fn subsets_up_to(items: &[usize], size: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
    let n = items.len();
    let mut idx: Option<Vec<usize>> = (size <= n).then(|| (0..size).collect());
    std::iter::from_fn(move || {
        let cur = idx.as_mut()?;
        let out: Vec<usize> = cur.iter().map(|&i| items[i]).collect();
        // advance to the next combination
        let mut pos = size;
        loop {
            if pos == 0 {
                idx = None;
                break;
            }
            pos -= 1;
            if cur[pos] < n - size + pos {
                cur[pos] += 1;
                for q in pos + 1..size {
                    cur[q] = cur[q - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    })
}
