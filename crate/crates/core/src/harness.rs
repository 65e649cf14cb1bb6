//! Replication engine for the simulation study.
//!
//! For every grid cell and replication: simulate, discretize, estimate the
//! target sets, score them against the truth, and estimate the causal effect
//! conditioning on each set. Aggregation is a fold in replication order, so
//! results do not depend on how replications were scheduled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::dataset::{discretize, RawDataset};
use crate::dgp::{check_success, replication_seed, simulate, true_ace, true_set, OutcomeModel, Setting, SimConfig, Success, TRUE_ACE_MC_N, TRUE_ACE_SEED};
use crate::error::{Error, Result};
use crate::estimators::{psm_ace, tmle_ace, AceEstimate, Estimator, PsmConfig, TmleConfig};
use crate::par::Execution;
use crate::targets::{estimate_targets, Method, TargetConfig, TargetSet, TargetSubsets};

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub settings: Vec<Setting>,
    pub ns: Vec<usize>,
    pub outcomes: Vec<OutcomeModel>,
    pub methods: Vec<Method>,
    pub estimators: Vec<Estimator>,
    /// Sets reported and passed to the estimators.
    pub sets: Vec<TargetSet>,
    pub replications: usize,
    pub base_seed: u64,
    pub p_total: usize,
    pub bins: usize,
    /// Structure-learning settings; `method`, `bins` and `exec` are
    /// overridden per run.
    pub target: TargetConfig,
    pub psm: PsmConfig,
    pub tmle: TmleConfig,
    /// Monte-Carlo size for true effects of the binary and nonlinear models.
    pub true_ace_mc_n: usize,
    pub exec: Execution,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            settings: vec![Setting::One],
            ns: vec![2000],
            outcomes: vec![OutcomeModel::Linear],
            methods: vec![Method::Mmpc],
            estimators: Estimator::ALL.to_vec(),
            sets: TargetSet::ALL.to_vec(),
            replications: 200,
            base_seed: 1,
            p_total: 100,
            bins: 3,
            target: TargetConfig::default(),
            psm: PsmConfig::default(),
            tmle: TmleConfig::default(),
            true_ace_mc_n: TRUE_ACE_MC_N,
            exec: Execution::Parallel,
        }
    }
}

impl GridSpec {
    /// `key=value` lines describing the run.
    pub fn header(&self) -> Vec<String> {
        let join = |v: Vec<String>| v.join(",");
        vec![
            format!("settings={}", join(self.settings.iter().map(|s| s.number().to_string()).collect())),
            format!("ns={}", join(self.ns.iter().map(|n| n.to_string()).collect())),
            format!("outcomes={}", join(self.outcomes.iter().map(|o| o.as_str().to_string()).collect())),
            format!("methods={}", join(self.methods.iter().map(|m| m.as_str().to_string()).collect())),
            format!("estimators={}", join(self.estimators.iter().map(|e| e.as_str().to_string()).collect())),
            format!("sets={}", join(self.sets.iter().map(|s| s.key().to_string()).collect())),
            format!("replications={}", self.replications),
            format!("seed={}", self.base_seed),
            format!("p_total={}", self.p_total),
            format!("bins={}", self.bins),
            format!("alpha={}", self.target.mmpc.alpha),
            format!("max_cond_size={}", self.target.mmpc.max_cond_size.map_or("none".to_string(), |m| m.to_string())),
            format!("min_obs_per_cell={}", self.target.mmpc.min_obs_per_cell.map_or("none".to_string(), |m| m.to_string())),
            format!("score={:?}", self.target.score).to_lowercase(),
            format!("caliper={}", self.psm.caliper.map_or("none".to_string(), |c| c.to_string())),
            format!("g_bounds={},{}", self.tmle.g_bounds.0, self.tmle.g_bounds.1),
            format!("true_ace_mc_n={}", self.true_ace_mc_n),
            format!("true_ace_seed={TRUE_ACE_SEED}"),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub setting: Setting,
    pub outcome: OutcomeModel,
    pub n: usize,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetRecord {
    pub set: TargetSet,
    pub names: Vec<String>,
    pub success: Success,
    pub psm: Option<AceEstimate>,
    pub tmle: Option<AceEstimate>,
    /// Estimators that were requested but failed.
    pub failed: Vec<Estimator>,
}

impl SetRecord {
    pub fn estimate(&self, e: Estimator) -> Option<&AceEstimate> {
        match e {
            Estimator::Psm => self.psm.as_ref(),
            Estimator::Tmle => self.tmle.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub cell: Cell,
    pub replication: usize,
    pub seed: u64,
    pub beta_true: f64,
    pub sets: Vec<SetRecord>,
    pub wall_seconds: f64,
}

/// Aggregates of one estimator over replications.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorMetrics {
    pub bias: f64,
    pub sd: f64,
    pub mse: f64,
    /// Coverage of the 95% interval, in percent.
    pub cp: f64,
    pub ciw: f64,
    pub cil: f64,
    pub ciu: f64,
    pub used: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub cell: Cell,
    pub set: TargetSet,
    pub replications: usize,
    /// Percent of replications whose set yields unconfoundedness.
    pub unconf: f64,
    pub superset: f64,
    pub equal: f64,
    pub card_median: f64,
    pub psm: Option<EstimatorMetrics>,
    pub tmle: Option<EstimatorMetrics>,
}

impl MetricsRow {
    pub fn estimator(&self, e: Estimator) -> Option<&EstimatorMetrics> {
        match e {
            Estimator::Psm => self.psm.as_ref(),
            Estimator::Tmle => self.tmle.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn row(&self, cell: &Cell, set: TargetSet) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| &r.cell == cell && r.set == set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutput {
    pub table: MetricsTable,
    pub records: Vec<ReplicationRecord>,
    pub true_betas: BTreeMap<(Setting, OutcomeModel), f64>,
}

/// Run every cell of the grid.
pub fn run_grid(spec: &GridSpec) -> Result<GridOutput> {
    if spec.replications == 0 {
        return Err(Error::InvalidArgument("replications must be at least 1".into()));
    }
    let mut true_betas = BTreeMap::new();
    for &setting in &spec.settings {
        for &outcome in &spec.outcomes {
            true_betas.insert((setting, outcome), true_ace(setting, outcome, spec.true_ace_mc_n));
        }
    }
    let mut records = Vec::new();
    for &setting in &spec.settings {
        for &outcome in &spec.outcomes {
            for &n in &spec.ns {
                let beta = true_betas[&(setting, outcome)];
                let per_rep = spec.exec.map(spec.replications, |r| run_replication(spec, setting, outcome, n, r, beta));
                for reps in per_rep {
                    records.extend(reps?);
                }
            }
        }
    }
    records.sort_by_key(|r| (r.cell, r.replication));
    let table = aggregate(&records, &spec.sets, &spec.estimators);
    Ok(GridOutput { table, records, true_betas })
}

/// One simulated dataset, analysed with every requested method.
pub fn run_replication(
    spec: &GridSpec,
    setting: Setting,
    outcome: OutcomeModel,
    n: usize,
    r: usize,
    beta_true: f64,
) -> Result<Vec<ReplicationRecord>> {
    let seed = replication_seed(spec.base_seed, r as u64);
    let start = std::time::Instant::now();
    let raw = simulate(&SimConfig { p_total: spec.p_total, ..SimConfig::new(setting, n, outcome, seed) })?;
    let data = discretize(&raw, spec.bins)?;
    let mut out = Vec::new();
    let mut x_cache: Option<SetRecord> = None;
    for &method in &spec.methods {
        let cfg = TargetConfig { method, bins: spec.bins, exec: Execution::Sequential, ..spec.target.clone() };
        let targets = estimate_targets(&data, &cfg)?;
        let mut sets = Vec::new();
        for &set in &spec.sets {
            if set == TargetSet::X {
                if let Some(rec) = &x_cache {
                    sets.push(rec.clone());
                    continue;
                }
            }
            let rec = evaluate_set(spec, &raw, &targets, setting, set);
            if set == TargetSet::X {
                x_cache = Some(rec.clone());
            }
            sets.push(rec);
        }
        out.push(ReplicationRecord {
            cell: Cell { setting, outcome, n, method },
            replication: r,
            seed,
            beta_true,
            sets,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    log::debug!("setting {} {} n={n} replication {r} took {:.2}s", setting.number(), outcome.as_str(), start.elapsed().as_secs_f64());
    Ok(out)
}

fn evaluate_set(spec: &GridSpec, raw: &RawDataset, targets: &TargetSubsets, setting: Setting, set: TargetSet) -> SetRecord {
    let names = targets.named(set);
    let selected: BTreeSet<String> = names.iter().cloned().collect();
    let success = check_success(setting, &selected, &true_set(setting, set, spec.p_total));
    let cols: Vec<usize> = names.iter().map(|nm| raw.column_index(nm).expect("selected column exists")).collect();
    let mut rec = SetRecord { set, names, success, psm: None, tmle: None, failed: Vec::new() };
    for &e in &spec.estimators {
        let res = match e {
            Estimator::Psm => psm_ace(raw, &cols, &spec.psm),
            Estimator::Tmle => tmle_ace(raw, &cols, &spec.tmle),
        };
        match res {
            Ok(est) => match e {
                Estimator::Psm => rec.psm = Some(est),
                Estimator::Tmle => rec.tmle = Some(est),
            },
            Err(err) => {
                log::warn!("{} on {} failed: {err}", e.as_str(), set.key());
                rec.failed.push(e);
            }
        }
    }
    rec
}

/// Fold records (sorted by cell and replication) into metrics.
pub fn aggregate(records: &[ReplicationRecord], sets: &[TargetSet], estimators: &[Estimator]) -> MetricsTable {
    let mut by_cell: BTreeMap<Cell, Vec<&ReplicationRecord>> = BTreeMap::new();
    for r in records {
        by_cell.entry(r.cell).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (cell, mut recs) in by_cell {
        recs.sort_by_key(|r| r.replication);
        for &set in sets {
            let entries: Vec<(&SetRecord, f64)> =
                recs.iter().filter_map(|r| r.sets.iter().find(|s| s.set == set).map(|s| (s, r.beta_true))).collect();
            if entries.is_empty() {
                continue;
            }
            let total = entries.len() as f64;
            let rate = |f: fn(&Success) -> bool| 100.0 * entries.iter().filter(|(s, _)| f(&s.success)).count() as f64 / total;
            let mut cards: Vec<usize> = entries.iter().map(|(s, _)| s.names.len()).collect();
            cards.sort_unstable();
            let card_median = median(&cards);
            let metrics = |e: Estimator| -> Option<EstimatorMetrics> {
                if !estimators.contains(&e) {
                    return None;
                }
                let ests: Vec<(&AceEstimate, f64)> = entries.iter().filter_map(|(s, b)| s.estimate(e).map(|x| (x, *b))).collect();
                let failed = entries.iter().filter(|(s, _)| s.failed.contains(&e)).count();
                Some(estimator_metrics(&ests, failed))
            };
            rows.push(MetricsRow {
                cell,
                set,
                replications: entries.len(),
                unconf: rate(|s| s.unconf),
                superset: rate(|s| s.superset),
                equal: rate(|s| s.equal),
                card_median,
                psm: metrics(Estimator::Psm),
                tmle: metrics(Estimator::Tmle),
            });
        }
    }
    MetricsTable { rows }
}

fn median(sorted: &[usize]) -> f64 {
    let m = sorted.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        sorted[m / 2] as f64
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) as f64 / 2.0
    }
}

/// Bias, population SD, MSE about the truth, coverage and interval summaries.
pub fn estimator_metrics(ests: &[(&AceEstimate, f64)], failed: usize) -> EstimatorMetrics {
    let k = ests.len();
    if k == 0 {
        return EstimatorMetrics {
            bias: f64::NAN,
            sd: f64::NAN,
            mse: f64::NAN,
            cp: f64::NAN,
            ciw: f64::NAN,
            cil: f64::NAN,
            ciu: f64::NAN,
            used: 0,
            failed,
        };
    }
    let kf = k as f64;
    let mean = |f: &dyn Fn(&AceEstimate, f64) -> f64| ests.iter().map(|(e, b)| f(e, *b)).sum::<f64>() / kf;
    let mean_beta = mean(&|e, _| e.beta_hat);
    let bias = mean(&|e, b| e.beta_hat - b);
    let sd = mean(&|e, _| (e.beta_hat - mean_beta).powi(2)).sqrt();
    let mse = mean(&|e, b| (e.beta_hat - b).powi(2));
    let cp = 100.0 * ests.iter().filter(|(e, b)| e.covers(*b)).count() as f64 / kf;
    EstimatorMetrics {
        bias,
        sd,
        mse,
        cp,
        ciw: mean(&|e, _| e.ci_high - e.ci_low),
        cil: mean(&|e, _| e.ci_low),
        ciu: mean(&|e, _| e.ci_high),
        used: k,
        failed,
    }
}

const METRIC_FIELDS: [&str; 7] = ["bias", "sd", "mse", "cp", "ciw", "cil", "ciu"];

fn write_header_lines<W: Write>(out: &mut W, header: &[String]) -> Result<()> {
    for h in header {
        writeln!(out, "# {h}")?;
    }
    Ok(())
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

/// `metrics.csv`: one row per (cell, set).
pub fn write_metrics_csv<W: Write>(mut out: W, table: &MetricsTable, header: &[String]) -> Result<()> {
    write_header_lines(&mut out, header)?;
    let mut cols: Vec<String> =
        ["setting", "outcome", "n", "method", "set", "Yt_perp_T", "S_subset", "S_equal", "card_median"].map(String::from).to_vec();
    for e in Estimator::ALL {
        cols.extend(METRIC_FIELDS.iter().map(|f| format!("{}_{f}", e.as_str())));
    }
    cols.extend(Estimator::ALL.iter().map(|e| format!("{}_failed", e.as_str())));
    writeln!(out, "{}", cols.join(","))?;
    for r in &table.rows {
        let mut fields = vec![
            r.cell.setting.number().to_string(),
            r.cell.outcome.as_str().to_string(),
            r.cell.n.to_string(),
            r.cell.method.as_str().to_string(),
            r.set.key().to_string(),
            format!("{:?}", r.unconf),
            format!("{:?}", r.superset),
            format!("{:?}", r.equal),
            format!("{:?}", r.card_median),
        ];
        for e in Estimator::ALL {
            let m = r.estimator(e);
            for v in [m.map(|m| m.bias), m.map(|m| m.sd), m.map(|m| m.mse), m.map(|m| m.cp), m.map(|m| m.ciw), m.map(|m| m.cil), m.map(|m| m.ciu)] {
                fields.push(opt_f64(v));
            }
        }
        for e in Estimator::ALL {
            fields.push(r.estimator(e).map_or(String::new(), |m| m.failed.to_string()));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

const RAW_COLUMNS: [&str; 25] = [
    "setting", "outcome", "n", "method", "replication", "seed", "beta_true", "set", "selected", "cardinality", "unconf",
    "superset", "equal", "psm_beta", "psm_se", "psm_cil", "psm_ciu", "psm_n", "psm_failed", "tmle_beta", "tmle_se",
    "tmle_cil", "tmle_ciu", "tmle_n", "tmle_failed",
];

/// `raw.csv`: one row per (cell, replication, set). Floats are written in
/// shortest round-trip form so the metrics can be recomputed exactly.
pub fn write_raw_csv<W: Write>(mut out: W, records: &[ReplicationRecord], header: &[String]) -> Result<()> {
    write_header_lines(&mut out, header)?;
    writeln!(out, "{}", RAW_COLUMNS.join(","))?;
    for r in records {
        for s in &r.sets {
            let mut fields = vec![
                r.cell.setting.number().to_string(),
                r.cell.outcome.as_str().to_string(),
                r.cell.n.to_string(),
                r.cell.method.as_str().to_string(),
                r.replication.to_string(),
                r.seed.to_string(),
                format!("{:?}", r.beta_true),
                s.set.key().to_string(),
                s.names.join(";"),
                s.names.len().to_string(),
                u8::from(s.success.unconf).to_string(),
                u8::from(s.success.superset).to_string(),
                u8::from(s.success.equal).to_string(),
            ];
            for e in Estimator::ALL {
                let est = s.estimate(e);
                fields.push(opt_f64(est.map(|x| x.beta_hat)));
                fields.push(opt_f64(est.map(|x| x.se)));
                fields.push(opt_f64(est.map(|x| x.ci_low)));
                fields.push(opt_f64(est.map(|x| x.ci_high)));
                fields.push(est.map_or(String::new(), |x| x.n_used.to_string()));
                fields.push(u8::from(s.failed.contains(&e)).to_string());
            }
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    Ok(())
}

/// Read records written by [`write_raw_csv`]. Wall times are not persisted
/// and come back as 0.
pub fn read_raw_csv<R: Read>(input: R) -> Result<Vec<ReplicationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RAW_COLUMNS {
        return Err(Error::DataFormat("raw.csv header does not match the expected columns".into()));
    }
    let bad = |what: &str, v: &str| Error::DataFormat(format!("raw.csv: bad {what} {v:?}"));
    let mut records: Vec<ReplicationRecord> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let num = |i: usize| f(i).parse::<f64>().map_err(|_| bad(RAW_COLUMNS[i], f(i)));
        let int = |i: usize| f(i).parse::<u64>().map_err(|_| bad(RAW_COLUMNS[i], f(i)));
        let flag = |i: usize| -> Result<bool> {
            match f(i) {
                "0" => Ok(false),
                "1" => Ok(true),
                v => Err(bad(RAW_COLUMNS[i], v)),
            }
        };
        let cell = Cell {
            setting: f(0).parse().map_err(|_| bad("setting", f(0)))?,
            outcome: f(1).parse().map_err(|_| bad("outcome", f(1)))?,
            n: int(2)? as usize,
            method: f(3).parse().map_err(|_| bad("method", f(3)))?,
        };
        let replication = int(4)? as usize;
        let seed = int(5)?;
        let beta_true = num(6)?;
        let set: TargetSet = f(7).parse().map_err(|_| bad("set", f(7)))?;
        let names: Vec<String> = f(8).split(';').filter(|s| !s.is_empty()).map(String::from).collect();
        let success = Success { unconf: flag(10)?, superset: flag(11)?, equal: flag(12)? };
        let mut rec = SetRecord { set, names, success, psm: None, tmle: None, failed: Vec::new() };
        for (k, e) in Estimator::ALL.into_iter().enumerate() {
            let base = 13 + 6 * k;
            if !f(base).is_empty() {
                let est = AceEstimate {
                    estimator: e,
                    beta_hat: num(base)?,
                    se: num(base + 1)?,
                    ci_low: num(base + 2)?,
                    ci_high: num(base + 3)?,
                    n_used: int(base + 4)? as usize,
                };
                match e {
                    Estimator::Psm => rec.psm = Some(est),
                    Estimator::Tmle => rec.tmle = Some(est),
                }
            }
            if flag(base + 5)? {
                rec.failed.push(e);
            }
        }
        match records.last_mut() {
            Some(last) if last.cell == cell && last.replication == replication => last.sets.push(rec),
            _ => records.push(ReplicationRecord { cell, replication, seed, beta_true, sets: vec![rec], wall_seconds: 0.0 }),
        }
    }
    Ok(records)
}

/// Human-readable tables, one per cell.
pub fn markdown_summary(output: &GridOutput, header: &[String]) -> String {
    let mut s = String::new();
    for h in header {
        let _ = writeln!(s, "# {h}");
    }
    let _ = writeln!(s);
    for ((setting, outcome), beta) in &output.true_betas {
        let _ = writeln!(s, "True effect, setting {} {}: {beta:.6}", setting.number(), outcome.as_str());
    }
    let mut current: Option<Cell> = None;
    for r in &output.table.rows {
        if current != Some(r.cell) {
            current = Some(r.cell);
            let _ = writeln!(
                s,
                "\n## Setting {}, {} outcome, n = {}, {}\n",
                r.cell.setting.number(),
                r.cell.outcome.as_str(),
                r.cell.n,
                r.cell.method.as_str().to_uppercase()
            );
            let _ = writeln!(s, "| set | Yt_perp_T | S_subset | S_equal | card | estimator | bias | SD | MSE | CP | CIW |");
            let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|");
        }
        let lead = format!("| {} | {:.1} | {:.1} | {:.1} | {} |", r.set.label(), r.unconf, r.superset, r.equal, r.card_median);
        let mut any = false;
        for e in Estimator::ALL {
            if let Some(m) = r.estimator(e) {
                any = true;
                let _ = writeln!(
                    s,
                    "{lead} {} | {:.3} | {:.3} | {:.3} | {:.1} | {:.3} |",
                    e.as_str().to_uppercase(),
                    m.bias,
                    m.sd,
                    m.mse,
                    m.cp,
                    m.ciw
                );
            }
        }
        if !any {
            let _ = writeln!(s, "{lead} | | | | | |");
        }
    }
    let failures: usize = output.records.iter().flat_map(|r| &r.sets).map(|s| s.failed.len()).sum();
    let _ = writeln!(s, "\nEstimator failures: {failures}");
    s
}
