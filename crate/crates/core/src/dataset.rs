//! Tabular data: raw (mixed continuous/factor) columns, quantile
//! discretization into factor codes, and contingency tables over arbitrary
//! variable subsets.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Columns whose name starts with this prefix carry simulation audit data
/// (potential outcomes, latent variables) and are never used as covariates.
pub const AUDIT_PREFIX: &str = "audit_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    Factor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
}

impl RawColumn {
    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Continuous, values }
    }

    pub fn factor(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Factor, values }
    }
}

/// Pre-discretization container.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    n: usize,
    columns: Vec<RawColumn>,
    treatment: Option<usize>,
    outcome: Option<usize>,
}

fn is_audit(name: &str) -> bool {
    name.starts_with(AUDIT_PREFIX)
}

impl RawDataset {
    pub fn new(columns: Vec<RawColumn>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.values.len());
        for c in &columns {
            if c.values.len() != n {
                return Err(Error::DataFormat(format!(
                    "column {} has {} rows, expected {n}",
                    c.name,
                    c.values.len()
                )));
            }
            match c.kind {
                ColumnKind::Continuous => {
                    if let Some(v) = c.values.iter().find(|v| !v.is_finite()) {
                        return Err(Error::DataFormat(format!(
                            "continuous column {} contains non-finite value {v}",
                            c.name
                        )));
                    }
                }
                ColumnKind::Factor => {
                    if let Some(v) = c.values.iter().find(|v| !(v.is_finite() && **v >= 0.0 && v.fract() == 0.0)) {
                        return Err(Error::DataFormat(format!(
                            "factor column {} contains {v}; factors must be nonnegative integers",
                            c.name
                        )));
                    }
                }
            }
        }
        for (a, ca) in columns.iter().enumerate() {
            if columns[..a].iter().any(|cb| cb.name == ca.name) {
                return Err(Error::DataFormat(format!("duplicate column name {}", ca.name)));
            }
        }
        Ok(Self { n, columns, treatment: None, outcome: None })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[RawColumn] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &RawColumn {
        &self.columns[idx]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn treatment(&self) -> Option<usize> {
        self.treatment
    }

    pub fn outcome(&self) -> Option<usize> {
        self.outcome
    }

    /// Tag the treatment and outcome columns. The treatment must be coded {0,1}.
    pub fn with_roles(mut self, treatment: &str, outcome: &str) -> Result<Self> {
        let t = self
            .column_index(treatment)
            .ok_or_else(|| Error::DataFormat(format!("treatment column {treatment} not found")))?;
        let y = self
            .column_index(outcome)
            .ok_or_else(|| Error::DataFormat(format!("outcome column {outcome} not found")))?;
        if t == y {
            return Err(Error::InvalidArgument("treatment and outcome must differ".into()));
        }
        if self.columns[t].values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::DataFormat(format!("treatment column {treatment} must be coded 0/1")));
        }
        self.columns[t].kind = ColumnKind::Factor;
        self.treatment = Some(t);
        self.outcome = Some(y);
        Ok(self)
    }

    /// Column indices usable as covariates: everything except the treatment,
    /// the outcome, and audit columns.
    pub fn covariate_indices(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| Some(i) != self.treatment && Some(i) != self.outcome && !is_audit(&self.columns[i].name))
            .collect()
    }

    /// Rows restricted to `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> RawDataset {
        let columns = self
            .columns
            .iter()
            .map(|c| RawColumn { name: c.name.clone(), kind: c.kind, values: rows.iter().map(|&r| c.values[r]).collect() })
            .collect();
        RawDataset { n: rows.len(), columns, treatment: self.treatment, outcome: self.outcome }
    }

    /// Read a CSV file. Lines starting with `#` are comments. When
    /// `factor_cols` is `None`, every column whose literals are all
    /// nonnegative integers is treated as a factor.
    pub fn read_csv<R: Read>(reader: R, factor_cols: Option<&[String]>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if headers.is_empty() {
            return Err(Error::DataFormat("CSV has no columns".into()));
        }
        if let Some(fc) = factor_cols {
            if let Some(missing) = fc.iter().find(|f| !headers.contains(f)) {
                return Err(Error::DataFormat(format!("--factor-cols names unknown column {missing}")));
            }
        }
        let p = headers.len();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); p];
        let mut all_int = vec![true; p];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != p {
                return Err(Error::DataFormat(format!("row {} has {} fields, expected {p}", row + 1, rec.len())));
            }
            for (j, field) in rec.iter().enumerate() {
                if field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan") {
                    return Err(Error::DataFormat(format!(
                        "missing value in column {} row {}; filter to complete cases before ingestion",
                        headers[j],
                        row + 1
                    )));
                }
                let v: f64 = field.parse().map_err(|_| {
                    Error::DataFormat(format!("column {} row {}: cannot parse {field:?} as a number", headers[j], row + 1))
                })?;
                if all_int[j] && field.parse::<u64>().is_err() {
                    all_int[j] = false;
                }
                values[j].push(v);
            }
        }
        let columns = headers
            .into_iter()
            .zip(values)
            .enumerate()
            .map(|(j, (name, vals))| {
                let factor = match factor_cols {
                    Some(fc) => fc.contains(&name),
                    None => all_int[j],
                };
                if factor {
                    RawColumn::factor(name, vals)
                } else {
                    RawColumn::continuous(name, vals)
                }
            })
            .collect();
        Self::new(columns)
    }

    /// Write as CSV, preceded by `# ` comment lines. Factor values are written
    /// as integers; continuous values in shortest round-trip form, always with
    /// a decimal point or exponent so they re-ingest as continuous.
    pub fn write_csv<W: Write>(&self, mut out: W, header_comments: &[String]) -> Result<()> {
        for line in header_comments {
            writeln!(out, "# {line}")?;
        }
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        writeln!(out, "{}", names.join(","))?;
        let mut line = String::new();
        for r in 0..self.n {
            line.clear();
            for (j, c) in self.columns.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                let v = c.values[r];
                match c.kind {
                    ColumnKind::Factor => line.push_str(&format!("{}", v as u64)),
                    ColumnKind::Continuous => line.push_str(&format!("{v:?}")),
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteColumn {
    pub name: String,
    pub codes: Vec<u32>,
    pub n_levels: u32,
}

impl DiscreteColumn {
    pub fn is_constant(&self) -> bool {
        self.n_levels <= 1
    }
}

/// Column-oriented table of factor-coded variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDataset {
    n: usize,
    columns: Vec<DiscreteColumn>,
    treatment: Option<usize>,
    outcome: Option<usize>,
}

impl DiscreteDataset {
    pub fn new(columns: Vec<DiscreteColumn>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.codes.len());
        for c in &columns {
            if c.codes.len() != n {
                return Err(Error::DataFormat(format!("column {} has {} rows, expected {n}", c.name, c.codes.len())));
            }
            if c.n_levels == 0 {
                return Err(Error::DataFormat(format!("column {} declares zero levels", c.name)));
            }
            if let Some(&bad) = c.codes.iter().find(|&&v| v >= c.n_levels) {
                return Err(Error::DataFormat(format!(
                    "column {} has code {bad} outside [0, {})",
                    c.name, c.n_levels
                )));
            }
        }
        Ok(Self { n, columns, treatment: None, outcome: None })
    }

    /// Convenience constructor from unnamed code vectors; levels are
    /// `max + 1` and columns are named `V0, V1, ...`.
    pub fn from_codes(cols: Vec<Vec<u32>>) -> Result<Self> {
        let columns = cols
            .into_iter()
            .enumerate()
            .map(|(j, codes)| {
                let n_levels = codes.iter().copied().max().map_or(1, |m| m + 1);
                DiscreteColumn { name: format!("V{j}"), codes, n_levels }
            })
            .collect();
        Self::new(columns)
    }

    pub fn with_role_indices(mut self, treatment: Option<usize>, outcome: Option<usize>) -> Self {
        self.treatment = treatment;
        self.outcome = outcome;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[DiscreteColumn] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &DiscreteColumn {
        &self.columns[idx]
    }

    pub fn codes(&self, idx: usize) -> &[u32] {
        &self.columns[idx].codes
    }

    pub fn n_levels(&self, idx: usize) -> u32 {
        self.columns[idx].n_levels
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.columns[idx].name
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn treatment(&self) -> Option<usize> {
        self.treatment
    }

    pub fn outcome(&self) -> Option<usize> {
        self.outcome
    }

    /// Subsample keeping `rows`. Level counts are kept from the parent so
    /// that subsamples share one coding.
    pub fn select_rows(&self, rows: &[usize]) -> DiscreteDataset {
        let columns = self
            .columns
            .iter()
            .map(|c| DiscreteColumn {
                name: c.name.clone(),
                codes: rows.iter().map(|&r| c.codes[r]).collect(),
                n_levels: c.n_levels,
            })
            .collect();
        DiscreteDataset { n: rows.len(), columns, treatment: self.treatment, outcome: self.outcome }
    }

    /// Dataset made of the listed columns, in that order. Roles are carried
    /// over when their column is kept.
    pub fn select_columns(&self, cols: &[usize]) -> DiscreteDataset {
        let columns = cols.iter().map(|&c| self.columns[c].clone()).collect();
        let remap = |role: Option<usize>| role.and_then(|r| cols.iter().position(|&c| c == r));
        DiscreteDataset { n: self.n, columns, treatment: remap(self.treatment), outcome: remap(self.outcome) }
    }

    /// Number of distinct codes that actually occur in column `idx`.
    pub fn observed_levels(&self, idx: usize) -> usize {
        let mut seen = vec![false; self.n_levels(idx) as usize];
        for &c in self.codes(idx) {
            seen[c as usize] = true;
        }
        seen.into_iter().filter(|&s| s).count()
    }
}

/// Outcome of discretizing one column, for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizeNote {
    pub column: String,
    pub levels: u32,
    pub collapsed: bool,
    pub constant: bool,
}

/// Quantile-discretize every continuous column of `raw` into at most `bins`
/// levels; factor columns are re-coded to `0..k-1` over their sorted distinct
/// values (unchanged when already coded that way).
///
/// Bin boundaries are the order statistics at positions `ceil(b*n/bins)`,
/// `b = 1..bins-1`; a value equal to a boundary falls in the lower bin.
pub fn discretize(raw: &RawDataset, bins: usize) -> Result<DiscreteDataset> {
    discretize_with_notes(raw, bins).map(|(d, _)| d)
}

pub fn discretize_with_notes(raw: &RawDataset, bins: usize) -> Result<(DiscreteDataset, Vec<DiscretizeNote>)> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("bins must be >= 2, got {bins}")));
    }
    if raw.n() == 0 {
        return Err(Error::InvalidArgument("cannot discretize an empty dataset".into()));
    }
    let mut notes = Vec::new();
    let columns = raw
        .columns()
        .iter()
        .map(|c| {
            let (codes, n_levels) = match c.kind {
                ColumnKind::Factor => compact_codes(&c.values),
                ColumnKind::Continuous => {
                    let (codes, n_levels) = quantile_codes(&c.values, bins);
                    if n_levels < bins as u32 {
                        log::warn!("column {} collapsed to {n_levels} level(s) (requested {bins} bins)", c.name);
                    }
                    notes.push(DiscretizeNote {
                        column: c.name.clone(),
                        levels: n_levels,
                        collapsed: n_levels < bins as u32,
                        constant: n_levels <= 1,
                    });
                    (codes, n_levels)
                }
            };
            DiscreteColumn { name: c.name.clone(), codes, n_levels }
        })
        .collect();
    let data = DiscreteDataset::new(columns)?.with_role_indices(raw.treatment(), raw.outcome());
    Ok((data, notes))
}

fn compact_codes(values: &[f64]) -> (Vec<u32>, u32) {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let codes = values
        .iter()
        .map(|v| distinct.binary_search_by(|d| d.total_cmp(v)).expect("value present") as u32)
        .collect();
    (codes, distinct.len().max(1) as u32)
}

/// Quantile boundaries (deduplicated) for `values` split into `bins` groups.
pub fn quantile_boundaries(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut bounds: Vec<f64> = (1..bins)
        .map(|b| {
            let pos = (b * n).div_ceil(bins).max(1);
            sorted[pos - 1]
        })
        .collect();
    bounds.dedup();
    // The top boundary never separates anything when it equals the maximum.
    if bounds.last() == sorted.last() {
        bounds.pop();
    }
    bounds
}

fn quantile_codes(values: &[f64], bins: usize) -> (Vec<u32>, u32) {
    let bounds = quantile_boundaries(values, bins);
    let raw_codes: Vec<u32> = values.iter().map(|&v| bounds.partition_point(|&b| b < v) as u32).collect();
    // Compact in case an interior bin ended up empty.
    let mut used = vec![false; bounds.len() + 1];
    for &c in &raw_codes {
        used[c as usize] = true;
    }
    let mut remap = vec![0u32; used.len()];
    let mut next = 0;
    for (slot, u) in remap.iter_mut().zip(&used) {
        *slot = next;
        if *u {
            next += 1;
        }
    }
    (raw_codes.iter().map(|&c| remap[c as usize]).collect(), next.max(1))
}

/// Joint counts of `(i, j)` within each observed configuration of the
/// conditioning set. Only strata with a nonzero count are materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub i: usize,
    pub j: usize,
    pub cond: Vec<usize>,
    /// Level counts of `i` and `j` (the table axes).
    pub a_levels: usize,
    pub b_levels: usize,
    /// Cell counts laid out as `[stratum][a][b]`.
    pub cells: Vec<u32>,
    pub n_k: Vec<u32>,
    pub n_ik: Vec<u32>,
    pub n_jk: Vec<u32>,
    pub n: usize,
}

impl ContingencyTable {
    pub fn strata(&self) -> usize {
        self.n_k.len()
    }

    pub fn cell(&self, stratum: usize, a: usize, b: usize) -> u32 {
        self.cells[(stratum * self.a_levels + a) * self.b_levels + b]
    }

    /// Build directly from counts laid out as `[stratum][a][b]`.
    pub fn from_counts(a_levels: usize, b_levels: usize, cells: Vec<u32>) -> Self {
        assert!(a_levels > 0 && b_levels > 0 && cells.len().is_multiple_of(a_levels * b_levels));
        let strata = cells.len() / (a_levels * b_levels);
        let mut n_k = vec![0u32; strata];
        let mut n_ik = vec![0u32; strata * a_levels];
        let mut n_jk = vec![0u32; strata * b_levels];
        for s in 0..strata {
            for a in 0..a_levels {
                for b in 0..b_levels {
                    let c = cells[(s * a_levels + a) * b_levels + b];
                    n_k[s] += c;
                    n_ik[s * a_levels + a] += c;
                    n_jk[s * b_levels + b] += c;
                }
            }
        }
        let n = n_k.iter().map(|&c| c as usize).sum();
        Self { i: 0, j: 1, cond: Vec::new(), a_levels, b_levels, cells, n_k, n_ik, n_jk, n }
    }

    /// Swap the roles of `i` and `j`.
    pub fn transposed(&self) -> Self {
        let (a_l, b_l) = (self.a_levels, self.b_levels);
        let mut cells = vec![0u32; self.cells.len()];
        for s in 0..self.strata() {
            for a in 0..a_l {
                for b in 0..b_l {
                    cells[(s * b_l + b) * a_l + a] = self.cell(s, a, b);
                }
            }
        }
        Self {
            i: self.j,
            j: self.i,
            cond: self.cond.clone(),
            a_levels: b_l,
            b_levels: a_l,
            cells,
            n_k: self.n_k.clone(),
            n_ik: self.n_jk.clone(),
            n_jk: self.n_ik.clone(),
            n: self.n,
        }
    }
}

/// Dense stratum id per row for the joint configuration of `cond`, plus the
/// number of observed strata. Ids follow the lexicographic order of the
/// configurations.
pub fn stratum_ids(data: &DiscreteDataset, cond: &[usize]) -> (Vec<u32>, usize) {
    let n = data.n();
    let mut ids = vec![0u32; n];
    let mut count = if n == 0 { 0 } else { 1 };
    for &v in cond {
        let levels = data.n_levels(v) as usize;
        let codes = data.codes(v);
        let span = count * levels;
        let mut map = vec![u32::MAX; span];
        for (id, &c) in ids.iter_mut().zip(codes) {
            *id = *id * levels as u32 + c;
            map[*id as usize] = 0;
        }
        let mut next = 0u32;
        for slot in map.iter_mut() {
            if *slot == 0 {
                *slot = next;
                next += 1;
            }
        }
        for id in ids.iter_mut() {
            *id = map[*id as usize];
        }
        count = next as usize;
    }
    (ids, count)
}

/// Contingency table of `i` by `j` within strata of `cond`.
pub fn contingency(data: &DiscreteDataset, i: usize, j: usize, cond: &[usize]) -> Result<ContingencyTable> {
    if i == j {
        return Err(Error::InvalidArgument(format!("contingency requires i != j (got {i} twice)")));
    }
    if cond.contains(&i) || cond.contains(&j) {
        return Err(Error::InvalidArgument("conditioning set must not contain i or j".into()));
    }
    let p = data.n_vars();
    if i >= p || j >= p || cond.iter().any(|&k| k >= p) {
        return Err(Error::InvalidArgument("variable index out of range".into()));
    }
    let (strata_of, strata) = stratum_ids(data, cond);
    let a_levels = data.n_levels(i) as usize;
    let b_levels = data.n_levels(j) as usize;
    let mut cells = vec![0u32; strata * a_levels * b_levels];
    let ci = data.codes(i);
    let cj = data.codes(j);
    for r in 0..data.n() {
        let s = strata_of[r] as usize;
        cells[(s * a_levels + ci[r] as usize) * b_levels + cj[r] as usize] += 1;
    }
    let mut table = ContingencyTable::from_counts(a_levels, b_levels, cells);
    table.i = i;
    table.j = j;
    table.cond = cond.to_vec();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_one(values: Vec<f64>) -> RawDataset {
        RawDataset::new(vec![RawColumn::continuous("x", values)]).unwrap()
    }

    #[test]
    fn factor_column_passes_through() {
        let raw = RawDataset::new(vec![RawColumn::factor("f", vec![0.0, 1.0, 0.0, 1.0])]).unwrap();
        let d = discretize(&raw, 3).unwrap();
        assert_eq!(d.codes(0), &[0, 1, 0, 1]);
        assert_eq!(d.n_levels(0), 2);
    }

    #[test]
    fn tertiles_of_one_to_nine() {
        let d = discretize(&raw_one((1..=9).map(f64::from).collect()), 3).unwrap();
        assert_eq!(d.codes(0), &[0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert_eq!(d.n_levels(0), 3);
    }

    #[test]
    fn all_equal_column_is_constant() {
        let (d, notes) = discretize_with_notes(&raw_one(vec![5.0; 7]), 3).unwrap();
        assert_eq!(d.n_levels(0), 1);
        assert!(d.column(0).is_constant());
        assert!(notes[0].constant && notes[0].collapsed);
        assert!(d.codes(0).iter().all(|&c| c == 0));
    }

    #[test]
    fn few_distinct_values_collapse() {
        let (d, notes) = discretize_with_notes(&raw_one(vec![0.0, 0.0, 1.0, 1.0, 1.0]), 3).unwrap();
        assert_eq!(d.n_levels(0), 2);
        assert_eq!(d.codes(0), &[0, 0, 1, 1, 1]);
        assert!(notes[0].collapsed && !notes[0].constant);
    }

    #[test]
    fn ties_at_boundary_go_low() {
        // boundaries at the 2nd and 4th order statistics: 2.0 and 2.0
        let d = discretize(&raw_one(vec![1.0, 2.0, 2.0, 2.0, 3.0, 4.0]), 3).unwrap();
        assert_eq!(d.codes(0), &[0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn rejects_bad_bins_and_empty() {
        assert!(discretize(&raw_one(vec![1.0, 2.0]), 1).is_err());
        let empty = RawDataset::new(vec![RawColumn::continuous("x", vec![])]).unwrap();
        assert!(discretize(&empty, 3).is_err());
    }

    #[test]
    fn uniform_two_by_two() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            for _ in 0..25 {
                a.push(x);
                b.push(y);
            }
        }
        let d = DiscreteDataset::from_codes(vec![a, b]).unwrap();
        let t = contingency(&d, 0, 1, &[]).unwrap();
        assert_eq!(t.n, 100);
        assert_eq!(t.strata(), 1);
        assert_eq!(t.cells, vec![25, 25, 25, 25]);
    }

    #[test]
    fn contingency_preconditions() {
        let d = DiscreteDataset::from_codes(vec![vec![0, 1], vec![1, 0], vec![0, 0]]).unwrap();
        assert!(contingency(&d, 0, 0, &[]).is_err());
        assert!(contingency(&d, 0, 1, &[1]).is_err());
        assert!(contingency(&d, 0, 1, &[2]).is_ok());
    }

    #[test]
    fn conditioning_partitions_by_filtering() {
        let a = vec![0, 1, 1, 0, 1, 0, 0, 1, 1, 1];
        let b = vec![1, 1, 0, 0, 1, 0, 1, 1, 0, 1];
        let c = vec![0, 0, 0, 1, 1, 1, 0, 1, 0, 1];
        let d = DiscreteDataset::from_codes(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let t = contingency(&d, 0, 1, &[2]).unwrap();
        for level in 0..2u32 {
            // oracle: filter rows by c and count
            let mut expect = [0u32; 4];
            for r in 0..a.len() {
                if c[r] == level {
                    expect[(a[r] * 2 + b[r]) as usize] += 1;
                }
            }
            let s = level as usize;
            let got = [t.cell(s, 0, 0), t.cell(s, 0, 1), t.cell(s, 1, 0), t.cell(s, 1, 1)];
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn unobserved_strata_not_materialized() {
        // c1 and c2 each take two values but only two of four combinations occur
        let d = DiscreteDataset::from_codes(vec![vec![0, 1, 0, 1], vec![1, 0, 0, 1], vec![0, 0, 1, 1], vec![0, 0, 1, 1]])
            .unwrap();
        let t = contingency(&d, 0, 1, &[2, 3]).unwrap();
        assert_eq!(t.strata(), 2);
        assert_eq!(t.n_k, vec![2, 2]);
    }

    #[test]
    fn csv_round_trip_and_kind_inference() {
        let raw = RawDataset::new(vec![
            RawColumn::factor("T", vec![0.0, 1.0, 1.0]),
            RawColumn::continuous("X", vec![1.0, -0.25, 3.5e-9]),
            RawColumn::continuous("Y", vec![2.0, 3.0, 4.0]),
        ])
        .unwrap();
        let mut buf = Vec::new();
        raw.write_csv(&mut buf, &["seed=7".to_string()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=7\nT,X,Y\n"));
        let back = RawDataset::read_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, raw);
    }

    #[test]
    fn csv_rejects_missing_values() {
        let err = RawDataset::read_csv("a,b\n1,2\n3,NA\n".as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("complete cases"), "{err}");
        assert!(RawDataset::read_csv("a,b\n1,2\n3,\n".as_bytes(), None).is_err());
    }

    #[test]
    fn roles_require_binary_treatment() {
        let raw = RawDataset::read_csv("T,Y\n0,1.5\n2,2.5\n".as_bytes(), None).unwrap();
        assert!(raw.with_roles("T", "Y").is_err());
        let raw = RawDataset::read_csv("T,Y,audit_Y0\n0,1.5,1.0\n1,2.5,1.0\n".as_bytes(), None).unwrap();
        let raw = raw.with_roles("T", "Y").unwrap();
        assert!(raw.covariate_indices().is_empty());
    }
}
