//! Stepwise estimation of the target covariate sets.
//!
//! Each step learns the neighborhood of the treatment or the outcome within a
//! restricted set of candidate covariates, either on the full sample or on one
//! treatment arm. Pretreatment covariates are never allowed to be children of
//! the focal vertex.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::citest::{CiOracle, ConditionedOracle, MiTest};
use crate::dataset::{DiscreteDataset, AUDIT_PREFIX};
use crate::error::{Error, Result};
use crate::graphs::{d_separated, Dag, DsepOracle};
use crate::par::Execution;
use crate::structure::{
    hill_climb, mmpc_blanket, mmpc_skeleton, subsets_up_to, HillClimbConfig, MmpcConfig, ScoreKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Method {
    #[default]
    Mmpc,
    Mmhc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mmpc => "mmpc",
            Method::Mmhc => "mmhc",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mmpc" => Ok(Method::Mmpc),
            "mmhc" => Ok(Method::Mmhc),
            other => Err(format!("unknown method {other:?} (expected mmpc or mmhc)")),
        }
    }
}

/// The covariate sets reported per replication. `X` is the full covariate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TargetSet {
    X,
    Xt,
    Qt,
    Xy,
    Zy,
    Xty,
    Wy,
}

impl TargetSet {
    pub const ALL: [TargetSet; 7] =
        [TargetSet::X, TargetSet::Xt, TargetSet::Qt, TargetSet::Xy, TargetSet::Zy, TargetSet::Xty, TargetSet::Wy];
    pub const ESTIMATED: [TargetSet; 6] =
        [TargetSet::Xt, TargetSet::Qt, TargetSet::Xy, TargetSet::Zy, TargetSet::Xty, TargetSet::Wy];

    pub fn key(self) -> &'static str {
        match self {
            TargetSet::X => "X",
            TargetSet::Xt => "xt",
            TargetSet::Qt => "qt",
            TargetSet::Xy => "xy",
            TargetSet::Zy => "zy",
            TargetSet::Xty => "xty",
            TargetSet::Wy => "wy",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TargetSet::X => "X",
            TargetSet::Xt => "X->T",
            TargetSet::Qt => "Q->T",
            TargetSet::Xy => "X->Y",
            TargetSet::Zy => "Z->Y",
            TargetSet::Xty => "X->T,Y",
            TargetSet::Wy => "W->Y",
        }
    }
}

impl std::str::FromStr for TargetSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        TargetSet::ALL
            .into_iter()
            .find(|t| t.key().eq_ignore_ascii_case(s) || t.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown target set {s:?}"))
    }
}

/// Estimated target sets as column indices, with the per-arm components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSubsets {
    /// Column names, indexed like the sets.
    pub names: Vec<String>,
    pub x: BTreeSet<usize>,
    pub xt: BTreeSet<usize>,
    pub qt: BTreeSet<usize>,
    pub qt_arms: [BTreeSet<usize>; 2],
    pub xy: BTreeSet<usize>,
    pub xy_arms: [BTreeSet<usize>; 2],
    pub zy: BTreeSet<usize>,
    pub zy_arms: [BTreeSet<usize>; 2],
    pub xty: BTreeSet<usize>,
    pub wy: BTreeSet<usize>,
    pub wy_arms: [BTreeSet<usize>; 2],
}

impl TargetSubsets {
    pub fn get(&self, set: TargetSet) -> &BTreeSet<usize> {
        match set {
            TargetSet::X => &self.x,
            TargetSet::Xt => &self.xt,
            TargetSet::Qt => &self.qt,
            TargetSet::Xy => &self.xy,
            TargetSet::Zy => &self.zy,
            TargetSet::Xty => &self.xty,
            TargetSet::Wy => &self.wy,
        }
    }

    /// Names of the members of `set`, in column order.
    pub fn named(&self, set: TargetSet) -> Vec<String> {
        self.get(set).iter().map(|&i| self.names[i].clone()).collect()
    }

    /// Checks `qt ⊆ xt`, `zy ⊆ xy`, `xty = xt ∪ xy`, `wy ⊆ xty ⊆ x`.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let union: BTreeSet<usize> = self.xt.union(&self.xy).copied().collect();
        let checks = [
            (self.qt.is_subset(&self.xt), "qt is not a subset of xt"),
            (self.zy.is_subset(&self.xy), "zy is not a subset of xy"),
            (self.xty == union, "xty differs from xt ∪ xy"),
            (self.wy.is_subset(&self.xty), "wy is not a subset of xty"),
            (self.xty.is_subset(&self.x), "xty is not a subset of the covariates"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err((*msg).to_string()),
            None => Ok(()),
        }
    }

    /// One line per set: label, then comma-separated names.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for set in TargetSet::ESTIMATED {
            let _ = writeln!(out, "{:<7} {}", set.label(), self.named(set).join(","));
        }
        out
    }

    /// Flat `key=name,name` lines including the per-arm components.
    pub fn to_key_list(&self) -> String {
        let names = |s: &BTreeSet<usize>| s.iter().map(|&i| self.names[i].as_str()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        for set in TargetSet::ESTIMATED {
            let _ = writeln!(out, "{}={}", set.key(), names(self.get(set)));
        }
        for (key, arms) in [("qt", &self.qt_arms), ("xy", &self.xy_arms), ("zy", &self.zy_arms), ("wy", &self.wy_arms)] {
            for (t, arm) in arms.iter().enumerate() {
                let _ = writeln!(out, "{key}{t}={}", names(arm));
            }
        }
        out
    }
}

/// Parse `key=a,b,c` lines (comments with `#`) into `(key, names)` pairs.
pub fn parse_key_list(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::DataFormat(format!("line {}: expected key=value", lineno + 1)))?;
        let names = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        out.push((k.trim().to_string(), names));
    }
    Ok(out)
}

/// Learns the neighborhood of a focal vertex among candidates, on the full
/// sample (`arm = None`) or on the rows with treatment arm `arm`.
pub trait BlanketLearner: Sync {
    fn blanket(&self, arm: Option<usize>, focal: usize, candidates: &[usize]) -> BTreeSet<usize>;
}

/// Runs the six steps with any blanket learner.
pub fn estimate_targets_with<L: BlanketLearner + ?Sized>(
    learner: &L,
    names: Vec<String>,
    x: &[usize],
    t: usize,
    y: usize,
) -> TargetSubsets {
    let xt = learner.blanket(None, t, x);
    let xt_v: Vec<usize> = xt.iter().copied().collect();
    let qt_arms = [0, 1].map(|a| learner.blanket(Some(a), y, &xt_v));
    let xy_arms = [0, 1].map(|a| learner.blanket(Some(a), y, x));
    let zy_arms = [0, 1].map(|a| {
        let cands: Vec<usize> = xy_arms[a].iter().copied().collect();
        learner.blanket(None, t, &cands)
    });
    let xy: BTreeSet<usize> = xy_arms[0].union(&xy_arms[1]).copied().collect();
    let xty: BTreeSet<usize> = xt.union(&xy).copied().collect();
    let xty_v: Vec<usize> = xty.iter().copied().collect();
    let wy_arms = [0, 1].map(|a| learner.blanket(Some(a), y, &xty_v));
    let union = |arms: &[BTreeSet<usize>; 2]| arms[0].union(&arms[1]).copied().collect::<BTreeSet<usize>>();
    let subsets = TargetSubsets {
        names,
        x: x.iter().copied().collect(),
        qt: union(&qt_arms),
        zy: union(&zy_arms),
        wy: union(&wy_arms),
        xt,
        qt_arms,
        xy,
        xy_arms,
        zy_arms,
        xty,
        wy_arms,
    };
    if let Err(e) = subsets.check_invariants() {
        panic!("target set invariant violated: {e}");
    }
    subsets
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetConfig {
    pub method: Method,
    pub mmpc: MmpcConfig,
    pub score: ScoreKind,
    pub max_iter: usize,
    /// Bins used when discretizing; an arm with fewer than `2 * bins` rows is
    /// skipped.
    pub bins: usize,
    pub exec: Execution,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            method: Method::Mmpc,
            mmpc: MmpcConfig::default(),
            score: ScoreKind::Aic,
            max_iter: HillClimbConfig::default().max_iter,
            bins: 3,
            exec: Execution::Parallel,
        }
    }
}

/// Blanket learner on data. Arms are physical row subsets.
pub struct DataLearner<'a> {
    full: &'a DiscreteDataset,
    arms: [Option<DiscreteDataset>; 2],
    cfg: &'a TargetConfig,
}

impl<'a> DataLearner<'a> {
    pub fn new(data: &'a DiscreteDataset, t: usize, cfg: &'a TargetConfig) -> Self {
        let arms = [0u32, 1].map(|code| {
            let rows: Vec<usize> = (0..data.n()).filter(|&r| data.codes(t)[r] == code).collect();
            if rows.len() < 2 * cfg.bins {
                log::warn!("treatment arm {code} has {} rows (< {}); it contributes no covariates", rows.len(), 2 * cfg.bins);
                None
            } else {
                Some(data.select_rows(&rows))
            }
        });
        Self { full: data, arms, cfg }
    }

    fn data(&self, arm: Option<usize>) -> Option<&DiscreteDataset> {
        match arm {
            None => Some(self.full),
            Some(a) => self.arms[a].as_ref(),
        }
    }
}

impl BlanketLearner for DataLearner<'_> {
    fn blanket(&self, arm: Option<usize>, focal: usize, candidates: &[usize]) -> BTreeSet<usize> {
        let Some(data) = self.data(arm) else { return BTreeSet::new() };
        match self.cfg.method {
            Method::Mmpc => {
                let oracle = MiTest::new(data, self.cfg.mmpc.ci_config());
                mmpc_blanket(&oracle, focal, candidates, &self.cfg.mmpc, self.cfg.exec)
            }
            Method::Mmhc => mmhc_blanket(data, focal, candidates, self.cfg),
        }
    }
}

/// Adjacency of `focal` in the hill-climbed DAG over `{focal} ∪ candidates`,
/// with `focal` barred from having children.
pub fn mmhc_blanket(data: &DiscreteDataset, focal: usize, candidates: &[usize], cfg: &TargetConfig) -> BTreeSet<usize> {
    let mut vars: Vec<usize> = candidates.iter().copied().filter(|&v| v != focal).collect();
    vars.sort_unstable();
    vars.dedup();
    vars.push(focal);
    let local_focal = vars.len() - 1;
    let sub = data.select_columns(&vars);
    let oracle = MiTest::new(&sub, cfg.mmpc.ci_config());
    let all: Vec<usize> = (0..vars.len()).collect();
    let skeleton = mmpc_skeleton(&oracle, &all, &cfg.mmpc, cfg.exec);
    let hc = HillClimbConfig { score: cfg.score, max_iter: cfg.max_iter, forbidden_children: BTreeSet::from([local_focal]) };
    let dag = hill_climb(&sub, &skeleton, &hc);
    dag.parents(local_focal).iter().chain(dag.children(local_focal)).map(|&v| vars[v]).collect()
}

/// Covariate columns of a dataset: everything but the treatment, the outcome
/// and audit columns.
pub fn covariate_columns(data: &DiscreteDataset) -> Vec<usize> {
    (0..data.n_vars())
        .filter(|&c| Some(c) != data.treatment() && Some(c) != data.outcome() && !data.name(c).starts_with(AUDIT_PREFIX))
        .collect()
}

/// Estimate the target sets from discretized data with designated treatment
/// and outcome columns.
pub fn estimate_targets(data: &DiscreteDataset, cfg: &TargetConfig) -> Result<TargetSubsets> {
    let t = data.treatment().ok_or_else(|| Error::InvalidArgument("dataset has no treatment column".into()))?;
    let y = data.outcome().ok_or_else(|| Error::InvalidArgument("dataset has no outcome column".into()))?;
    if data.n_levels(t) > 2 {
        return Err(Error::DataFormat(format!("treatment column {} is not binary", data.name(t))));
    }
    let x = covariate_columns(data);
    let learner = DataLearner::new(data, t, cfg);
    let names = data.columns().iter().map(|c| c.name.clone()).collect();
    Ok(estimate_targets_with(&learner, names, &x, t, y))
}

/// Blanket learner answering from a CI oracle; an arm adds the treatment to
/// every conditioning set.
pub struct OracleLearner<O> {
    oracle: O,
    t: usize,
    cfg: MmpcConfig,
    exec: Execution,
}

impl<O: CiOracle> OracleLearner<O> {
    pub fn new(oracle: O, t: usize, cfg: MmpcConfig, exec: Execution) -> Self {
        Self { oracle, t, cfg, exec }
    }
}

impl<O: CiOracle> BlanketLearner for OracleLearner<O> {
    fn blanket(&self, arm: Option<usize>, focal: usize, candidates: &[usize]) -> BTreeSet<usize> {
        match arm {
            None => mmpc_blanket(&self.oracle, focal, candidates, &self.cfg, self.exec),
            Some(_) => {
                let conditioned = ConditionedOracle::new(&self.oracle, vec![self.t]);
                mmpc_blanket(&conditioned, focal, candidates, &self.cfg, self.exec)
            }
        }
    }
}

/// Target sets estimated with MMPC from the d-separation oracle of `dag`,
/// restricted to the observed vertices `x ∪ {t, y}`, with uncapped phase-2
/// conditioning.
pub fn oracle_targets(dag: &Dag, x: &[usize], t: usize, y: usize) -> TargetSubsets {
    let mut observed = x.to_vec();
    observed.extend([t, y]);
    let oracle = DsepOracle::with_observed(dag.clone(), &observed);
    let learner = OracleLearner::new(oracle, t, MmpcConfig::uncapped(), Execution::Sequential);
    estimate_targets_with(&learner, dag.names().to_vec(), x, t, y)
}

/// Smallest `S ⊆ within` with `focal ⟂ within \ S | S` in `dag`, searching by
/// increasing size (first hit in lexicographic order).
pub fn markov_boundary_within(dag: &Dag, focal: usize, within: &[usize]) -> BTreeSet<usize> {
    for size in 0..=within.len() {
        for s in subsets_up_to(within, size) {
            if within.iter().filter(|v| !s.contains(v)).all(|&v| d_separated(dag, focal, v, &s)) {
                return s.into_iter().collect();
            }
        }
    }
    within.iter().copied().collect()
}

/// The target sets read off `dag` by definition, with `y` standing for the
/// potential outcome (no arm conditioning).
pub fn definitional_targets(dag: &Dag, x: &[usize], t: usize, y: usize) -> TargetSubsets {
    let xt = markov_boundary_within(dag, t, x);
    let xy = markov_boundary_within(dag, y, x);
    let xt_v: Vec<usize> = xt.iter().copied().collect();
    let xy_v: Vec<usize> = xy.iter().copied().collect();
    let qt = markov_boundary_within(dag, y, &xt_v);
    let zy = markov_boundary_within(dag, t, &xy_v);
    let xty: BTreeSet<usize> = xt.union(&xy).copied().collect();
    let xty_v: Vec<usize> = xty.iter().copied().collect();
    let wy = markov_boundary_within(dag, y, &xty_v);
    TargetSubsets {
        names: dag.names().to_vec(),
        x: x.iter().copied().collect(),
        qt_arms: [qt.clone(), qt.clone()],
        xy_arms: [xy.clone(), xy.clone()],
        zy_arms: [zy.clone(), zy.clone()],
        wy_arms: [wy.clone(), wy.clone()],
        xt,
        qt,
        xy,
        zy,
        xty,
        wy,
    }
}
