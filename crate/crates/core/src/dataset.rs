//! Ingestion, validation and reshaping of raw data.
//!
//! A [`Dataset`] is the validated cross-sectional input: outcome, binary
//! treatment, raw covariates and an optional cluster id. Discrete covariates
//! are turned into cell indicators by [`saturate`]; staggered-adoption panels
//! are stacked into a `Dataset` by [`panel_to_design`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::design::Estimand;
use crate::error::{Error, Result};
use crate::warning::Warning;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateKind {
    Discrete,
    Continuous,
    /// Cell indicator emitted by saturation or a fixed-effect dummy.
    Indicator,
}

/// Which CSV column plays which role.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    /// Subset of `covariates` that are discrete.
    pub discrete: Vec<String>,
    pub cluster: Option<String>,
}

impl Schema {
    pub fn new(outcome: &str, treatment: &str, covariates: &[&str]) -> Self {
        Schema {
            outcome: outcome.to_string(),
            treatment: treatment.to_string(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            discrete: Vec::new(),
            cluster: None,
        }
    }

    pub fn with_discrete(mut self, discrete: &[&str]) -> Self {
        self.discrete = discrete.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_cluster(mut self, cluster: &str) -> Self {
        self.cluster = Some(cluster.to_string());
        self
    }
}

/// Partition of the rows into saturated covariate cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellIndex {
    /// Cell of each row; cell 0 is the reference cell.
    pub ids: Vec<usize>,
    pub labels: Vec<String>,
}

impl CellIndex {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count()];
        for &c in &self.ids {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Heterogeneity dictionary supplied separately from the controls.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectBasis {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub outcome: DVector<f64>,
    pub treatment: DVector<f64>,
    pub covariates: DMatrix<f64>,
    pub covariate_names: Vec<String>,
    pub covariate_kinds: Vec<CovariateKind>,
    /// Level labels of non-numeric discrete columns, indexed by code.
    pub level_labels: Vec<Option<Vec<String>>>,
    pub cluster_id: Option<Vec<i64>>,
    pub cells: Option<CellIndex>,
    pub effect_basis: Option<EffectBasis>,
    pub warnings: Vec<Warning>,
}

impl Dataset {
    pub fn new(
        outcome: Vec<f64>,
        treatment: Vec<f64>,
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let k = covariates.ncols();
        let ds = Dataset {
            outcome: DVector::from_vec(outcome),
            treatment: DVector::from_vec(treatment),
            covariates,
            covariate_kinds: vec![CovariateKind::Continuous; k],
            level_labels: vec![None; k],
            covariate_names,
            cluster_id: None,
            cells: None,
            effect_basis: None,
            warnings: Vec::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_kinds(mut self, kinds: Vec<CovariateKind>) -> Result<Self> {
        if kinds.len() != self.covariates.ncols() {
            return Err(Error::InvalidData("covariate kind list has wrong length".into()));
        }
        self.covariate_kinds = kinds;
        Ok(self)
    }

    pub fn with_clusters(mut self, ids: Vec<i64>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::InvalidData(format!(
                "cluster id has length {} but n = {}",
                ids.len(),
                self.n()
            )));
        }
        self.cluster_id = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.outcome.len();
        if n < 2 {
            return Err(Error::InvalidData(format!("need n >= 2 rows, got {n}")));
        }
        if self.treatment.len() != n || self.covariates.nrows() != n {
            return Err(Error::InvalidData("column lengths differ".into()));
        }
        if self.covariate_names.len() != self.covariates.ncols() {
            return Err(Error::InvalidData("covariate name list has wrong length".into()));
        }
        for (i, &y) in self.outcome.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::NonFinite { row: i + 1, column: "outcome".into() });
            }
        }
        for (i, &d) in self.treatment.iter().enumerate() {
            if d != 0.0 && d != 1.0 {
                return Err(Error::NonBinaryTreatment { row: i + 1, value: d.to_string() });
            }
        }
        for j in 0..self.covariates.ncols() {
            for i in 0..n {
                if !self.covariates[(i, j)].is_finite() {
                    return Err(Error::NonFinite {
                        row: i + 1,
                        column: self.covariate_names[j].clone(),
                    });
                }
            }
        }
        let treated = self.treatment.iter().filter(|&&d| d == 1.0).count();
        if treated == 0 || treated == n {
            return Err(Error::InvalidData(
                "need at least one treated and one untreated unit".into(),
            ));
        }
        if let Some(c) = &self.cluster_id {
            if c.len() != n {
                return Err(Error::InvalidData("cluster id length differs from n".into()));
            }
        }
        Ok(())
    }

    /// Writes outcome, treatment, covariates and cluster id (if any) as CSV.
    /// Values use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["outcome".to_string(), "treatment".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        if self.cluster_id.is_some() {
            header.push("cluster".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.outcome[i].to_string(), self.treatment[i].to_string()];
            rec.extend((0..self.covariates.ncols()).map(|j| self.covariates[(i, j)].to_string()));
            if let Some(c) = &self.cluster_id {
                rec.push(c[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Schema matching the layout written by [`Dataset::write_csv`].
    pub fn dump_schema(&self) -> Schema {
        Schema {
            outcome: "outcome".into(),
            treatment: "treatment".into(),
            covariates: self.covariate_names.clone(),
            discrete: Vec::new(),
            cluster: self.cluster_id.as_ref().map(|_| "cluster".to_string()),
        }
    }

    /// Rows of the dataset selected by `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let m = rows.len();
        let k = self.covariates.ncols();
        let cov = DMatrix::from_fn(m, k, |i, j| self.covariates[(rows[i], j)]);
        let mut out = Dataset {
            outcome: DVector::from_fn(m, |i, _| self.outcome[rows[i]]),
            treatment: DVector::from_fn(m, |i, _| self.treatment[rows[i]]),
            covariates: cov,
            covariate_names: self.covariate_names.clone(),
            covariate_kinds: self.covariate_kinds.clone(),
            level_labels: self.level_labels.clone(),
            cluster_id: self.cluster_id.as_ref().map(|c| rows.iter().map(|&r| c[r]).collect()),
            cells: self.cells.as_ref().map(|c| CellIndex {
                ids: rows.iter().map(|&r| c.ids[r]).collect(),
                labels: c.labels.clone(),
            }),
            effect_basis: self.effect_basis.as_ref().map(|b| EffectBasis {
                names: b.names.clone(),
                values: DMatrix::from_fn(m, b.values.ncols(), |i, j| b.values[(rows[i], j)]),
            }),
            warnings: Vec::new(),
        };
        out.validate()?;
        out.warnings = self.warnings.clone();
        Ok(out)
    }
}

fn parse_f64(raw: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() {
        return Some(f64::NAN);
    }
    match t.to_ascii_lowercase().as_str() {
        "na" | "nan" | "null" => Some(f64::NAN),
        _ => t.parse::<f64>().ok(),
    }
}

fn parse_treatment(raw: &str, row: usize) -> Result<f64> {
    match raw.trim() {
        "1" | "1.0" | "true" | "TRUE" => Ok(1.0),
        "0" | "0.0" | "false" | "FALSE" => Ok(0.0),
        other => match other.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
            Ok(v) if v.is_nan() => Err(Error::NonFinite { row, column: "treatment".into() }),
            _ => Err(Error::NonBinaryTreatment { row, value: other.to_string() }),
        },
    }
}

/// Reads a dataset from CSV text. Lines starting with `#` are ignored.
pub fn read_csv<R: Read>(input: R, schema: &Schema) -> Result<Dataset> {
    if schema.covariates.is_empty() {
        return Err(Error::Config("schema needs at least one covariate column".into()));
    }
    for d in &schema.discrete {
        if !schema.covariates.contains(d) {
            return Err(Error::Config(format!("discrete column `{d}` is not a covariate")));
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_col = find(&schema.outcome)?;
    let d_col = find(&schema.treatment)?;
    let x_cols: Vec<usize> = schema.covariates.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let cl_col = schema.cluster.as_deref().map(find).transpose()?;

    let mut outcome = Vec::new();
    let mut treatment = Vec::new();
    let mut raw_cov: Vec<Vec<String>> = vec![Vec::new(); x_cols.len()];
    let mut raw_cluster = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let y = parse_f64(&rec[y_col]).ok_or_else(|| {
            Error::InvalidData(format!("unparsable outcome `{}` at row {row}", &rec[y_col]))
        })?;
        if !y.is_finite() {
            return Err(Error::NonFinite { row, column: schema.outcome.clone() });
        }
        outcome.push(y);
        treatment.push(parse_treatment(&rec[d_col], row)?);
        for (j, &c) in x_cols.iter().enumerate() {
            raw_cov[j].push(rec[c].to_string());
        }
        if let Some(c) = cl_col {
            raw_cluster.push(rec[c].to_string());
        }
    }
    let n = outcome.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }

    let k = x_cols.len();
    let mut cov = DMatrix::zeros(n, k);
    let mut kinds = Vec::with_capacity(k);
    let mut labels = Vec::with_capacity(k);
    for (j, name) in schema.covariates.iter().enumerate() {
        let discrete = schema.discrete.contains(name);
        let parsed: Vec<Option<f64>> = raw_cov[j].iter().map(|s| parse_f64(s)).collect();
        let numeric = parsed.iter().all(|v| v.is_some());
        if numeric {
            for (i, v) in parsed.into_iter().enumerate() {
                let v = v.unwrap_or(f64::NAN);
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i + 1, column: name.clone() });
                }
                cov[(i, j)] = v;
            }
            labels.push(None);
        } else if discrete {
            let levels: BTreeSet<&str> = raw_cov[j].iter().map(|s| s.as_str()).collect();
            let levels: Vec<String> = levels.into_iter().map(str::to_string).collect();
            let code: HashMap<&str, usize> =
                levels.iter().enumerate().map(|(c, l)| (l.as_str(), c)).collect();
            for (i, s) in raw_cov[j].iter().enumerate() {
                cov[(i, j)] = code[s.as_str()] as f64;
            }
            labels.push(Some(levels));
        } else {
            let row = raw_cov[j].iter().position(|s| parse_f64(s).is_none()).unwrap_or(0) + 1;
            return Err(Error::InvalidData(format!(
                "non-numeric value in continuous column `{name}` at row {row}"
            )));
        }
        kinds.push(if discrete { CovariateKind::Discrete } else { CovariateKind::Continuous });
    }

    let cluster_id = if cl_col.is_some() {
        let ints: Option<Vec<i64>> = raw_cluster.iter().map(|s| s.trim().parse::<i64>().ok()).collect();
        Some(match ints {
            Some(v) => v,
            None => {
                let levels: BTreeSet<&str> = raw_cluster.iter().map(|s| s.as_str()).collect();
                let code: HashMap<&str, i64> =
                    levels.into_iter().enumerate().map(|(c, l)| (l, c as i64)).collect();
                raw_cluster.iter().map(|s| code[s.as_str()]).collect()
            }
        })
    } else {
        None
    };

    let ds = Dataset {
        outcome: DVector::from_vec(outcome),
        treatment: DVector::from_vec(treatment),
        covariates: cov,
        covariate_names: schema.covariates.clone(),
        covariate_kinds: kinds,
        level_labels: labels,
        cluster_id,
        cells: None,
        effect_basis: None,
        warnings: Vec::new(),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn load_csv<P: AsRef<Path>>(path: P, schema: &Schema) -> Result<Dataset> {
    let f = File::open(path.as_ref())?;
    read_csv(f, schema)
}

fn level_text(ds: &Dataset, col: usize, value: f64) -> String {
    match &ds.level_labels[col] {
        Some(labels) => labels[value as usize].clone(),
        None => value.to_string(),
    }
}

/// Replaces the named discrete columns by mutually exclusive indicators for
/// every observed combination of their levels. The lexicographically smallest
/// combination is the reference cell and gets no indicator.
pub fn saturate(ds: &Dataset, columns: &[&str]) -> Result<Dataset> {
    if columns.is_empty() {
        return Err(Error::Config("saturate needs at least one column".into()));
    }
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| ds.column_index(c).ok_or_else(|| Error::MissingColumn(c.to_string())))
        .collect::<Result<_>>()?;
    for (&j, name) in idx.iter().zip(columns) {
        if ds.covariate_kinds[j] != CovariateKind::Discrete {
            return Err(Error::InvalidData(format!("column `{name}` is not discrete")));
        }
    }
    let n = ds.n();
    let key = |i: usize| -> Vec<f64> { idx.iter().map(|&j| ds.covariates[(i, j)]).collect() };
    let cmp = |a: &Vec<f64>, b: &Vec<f64>| -> Ordering {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    };
    let mut combos: Vec<Vec<f64>> = (0..n).map(key).collect();
    combos.sort_by(cmp);
    combos.dedup_by(|a, b| cmp(a, b) == Ordering::Equal);
    let m = combos.len();
    if m > n - 1 {
        return Err(Error::SaturationExceedsDof { cells: m, n });
    }
    let ids: Vec<usize> = (0..n)
        .map(|i| {
            let k = key(i);
            combos.binary_search_by(|c| cmp(c, &k)).expect("observed combination")
        })
        .collect();
    let labels: Vec<String> = combos
        .iter()
        .map(|combo| {
            let parts: Vec<String> = idx
                .iter()
                .zip(combo)
                .map(|(&j, &v)| format!("{}={}", ds.covariate_names[j], level_text(ds, j, v)))
                .collect();
            format!("cell[{}]", parts.join(","))
        })
        .collect();

    let keep: Vec<usize> = (0..ds.covariates.ncols()).filter(|j| !idx.contains(j)).collect();
    let total = keep.len() + m - 1;
    let mut cov = DMatrix::zeros(n, total);
    let mut names = Vec::with_capacity(total);
    let mut kinds = Vec::with_capacity(total);
    let mut level_labels = Vec::with_capacity(total);
    for (c, &j) in keep.iter().enumerate() {
        cov.set_column(c, &ds.covariates.column(j));
        names.push(ds.covariate_names[j].clone());
        kinds.push(ds.covariate_kinds[j]);
        level_labels.push(ds.level_labels[j].clone());
    }
    for cell in 1..m {
        let c = keep.len() + cell - 1;
        for i in 0..n {
            if ids[i] == cell {
                cov[(i, c)] = 1.0;
            }
        }
        names.push(labels[cell].clone());
        kinds.push(CovariateKind::Indicator);
        level_labels.push(None);
    }
    let mut warnings = ds.warnings.clone();
    if m == 1 {
        warnings.push(Warning::DegenerateCovariate { column: columns.join(",") });
    }
    Ok(Dataset {
        outcome: ds.outcome.clone(),
        treatment: ds.treatment.clone(),
        covariates: cov,
        covariate_names: names,
        covariate_kinds: kinds,
        level_labels,
        cluster_id: ds.cluster_id.clone(),
        cells: Some(CellIndex { ids, labels }),
        effect_basis: ds.effect_basis.clone(),
        warnings,
    })
}

/// Saturates every column marked discrete in the dataset.
pub fn saturate_discrete(ds: &Dataset) -> Result<Dataset> {
    let cols: Vec<&str> = ds
        .covariate_names
        .iter()
        .zip(&ds.covariate_kinds)
        .filter(|(_, k)| **k == CovariateKind::Discrete)
        .map(|(n, _)| n.as_str())
        .collect();
    if cols.is_empty() {
        Ok(ds.clone())
    } else {
        saturate(ds, &cols)
    }
}

/// Long-format panel with a binary, absorbing treatment.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub unit_id: Vec<i64>,
    pub time: Vec<i64>,
    pub outcome: Vec<f64>,
    pub treated: Vec<f64>,
    /// First treatment period per unit; `None` marks never-treated units.
    pub first_treatment: BTreeMap<i64, Option<i64>>,
}

impl PanelDataset {
    pub fn new(unit_id: Vec<i64>, time: Vec<i64>, outcome: Vec<f64>, treated: Vec<f64>) -> Result<Self> {
        let n = unit_id.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if time.len() != n || outcome.len() != n || treated.len() != n {
            return Err(Error::InvalidData("panel columns have different lengths".into()));
        }
        for (i, (&y, &d)) in outcome.iter().zip(&treated).enumerate() {
            if !y.is_finite() {
                return Err(Error::NonFinite { row: i + 1, column: "outcome".into() });
            }
            if d != 0.0 && d != 1.0 {
                return Err(Error::NonBinaryTreatment { row: i + 1, value: d.to_string() });
            }
        }
        let mut per_unit: BTreeMap<i64, Vec<(i64, f64)>> = BTreeMap::new();
        for i in 0..n {
            per_unit.entry(unit_id[i]).or_default().push((time[i], treated[i]));
        }
        let mut first_treatment = BTreeMap::new();
        for (&unit, obs) in per_unit.iter_mut() {
            obs.sort_by_key(|o| o.0);
            if obs.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidData(format!("duplicate time period for unit {unit}")));
            }
            let mut first = None;
            for &(t, d) in obs.iter() {
                match (first, d == 1.0) {
                    (None, true) => first = Some(t),
                    (Some(_), false) => return Err(Error::NotStaggered { unit }),
                    _ => {}
                }
            }
            first_treatment.insert(unit, first);
        }
        Ok(PanelDataset { unit_id, time, outcome, treated, first_treatment })
    }

    pub fn n_obs(&self) -> usize {
        self.unit_id.len()
    }

    pub fn cohort(&self, row: usize) -> Option<i64> {
        self.first_treatment[&self.unit_id[row]]
    }
}

pub fn load_panel_csv<P: AsRef<Path>>(
    path: P,
    unit: &str,
    time: &str,
    outcome: &str,
    treatment: &str,
) -> Result<PanelDataset> {
    let f = File::open(path.as_ref())?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(f);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (u, t, y, d) = (find(unit)?, find(time)?, find(outcome)?, find(treatment)?);
    let (mut us, mut ts, mut ys, mut ds) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let int = |c: usize, name: &str| -> Result<i64> {
            rec[c].trim().parse::<i64>().map_err(|_| {
                Error::InvalidData(format!("non-integer {name} `{}` at row {row}", &rec[c]))
            })
        };
        us.push(int(u, unit)?);
        ts.push(int(t, time)?);
        let yv = parse_f64(&rec[y]).unwrap_or(f64::NAN);
        if !yv.is_finite() {
            return Err(Error::NonFinite { row, column: outcome.to_string() });
        }
        ys.push(yv);
        ds.push(parse_treatment(&rec[d], row)?);
    }
    PanelDataset::new(us, ts, ys, ds)
}

/// Stacked panel design together with its bookkeeping.
#[derive(Debug, Clone)]
pub struct PanelDesign {
    pub dataset: Dataset,
    /// Treated cohorts (first treatment periods), ascending.
    pub cohorts: Vec<i64>,
    pub has_never_treated: bool,
    pub times: Vec<i64>,
    /// All observed (cohort, event time) cells with event time >= 0.
    pub cells: Vec<(i64, i64)>,
    pub dropped_cell: (i64, i64),
    /// Share of treated observations in each cell of `cells`.
    pub att_weights: Vec<f64>,
}

/// Stacks a staggered-adoption panel into a cross-sectional design for the ATT.
///
/// Controls are cohort and time fixed effects (the smallest cohort and the
/// first period are the references; never-treated units form their own
/// cohort). The heterogeneity dictionary holds the (cohort, event time)
/// indicators re-centred by their treated-observation shares, with the
/// smallest cell dropped.
pub fn panel_to_design(p: &PanelDataset, estimand: Estimand) -> Result<PanelDesign> {
    if estimand != Estimand::Att {
        return Err(Error::Config("staggered designs target the ATT".into()));
    }
    let n = p.n_obs();
    let cohort_of: Vec<Option<i64>> = (0..n).map(|i| p.cohort(i)).collect();
    let cohorts: Vec<i64> = p.first_treatment.values().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if cohorts.is_empty() {
        return Err(Error::InvalidData("no treated cohort in panel".into()));
    }
    let has_never = p.first_treatment.values().any(|e| e.is_none());
    let times: Vec<i64> = p.time.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();

    // (cohort, event time) cells of treated observations.
    let mut cell_counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for i in 0..n {
        if p.treated[i] == 1.0 {
            let e = cohort_of[i].expect("treated observation has a cohort");
            *cell_counts.entry((e, p.time[i] - e)).or_default() += 1;
        }
    }
    let n_treated: usize = cell_counts.values().sum();
    let cells: Vec<(i64, i64)> = cell_counts.keys().copied().collect();
    let att_weights: Vec<f64> = cells.iter().map(|c| cell_counts[c] as f64 / n_treated as f64).collect();

    let mut warnings = Vec::new();
    let mut all_treated_periods = Vec::new();
    for &t in &times {
        let untreated = (0..n).any(|i| p.time[i] == t && p.treated[i] == 0.0);
        if !untreated {
            all_treated_periods.push(t);
        }
    }
    if !all_treated_periods.is_empty() {
        warnings.push(Warning::AttNotIdentified { periods: all_treated_periods });
    }

    // Controls: cohort dummies (reference = first cohort; never-treated last), time dummies.
    let mut cohort_levels: Vec<Option<i64>> = cohorts.iter().map(|&e| Some(e)).collect();
    if has_never {
        cohort_levels.push(None);
    }
    let n_ctrl = cohort_levels.len() - 1 + times.len() - 1;
    let mut controls = DMatrix::zeros(n, n_ctrl);
    let mut names = Vec::with_capacity(n_ctrl);
    for (c, level) in cohort_levels.iter().enumerate().skip(1) {
        for i in 0..n {
            if cohort_of[i] == *level {
                controls[(i, c - 1)] = 1.0;
            }
        }
        names.push(match level {
            Some(e) => format!("cohort[{e}]"),
            None => "cohort[never]".to_string(),
        });
    }
    let off = cohort_levels.len() - 1;
    for (c, &t) in times.iter().enumerate().skip(1) {
        for i in 0..n {
            if p.time[i] == t {
                controls[(i, off + c - 1)] = 1.0;
            }
        }
        names.push(format!("time[{t}]"));
    }

    // Re-centred effect dictionary, first cell dropped.
    let kept = &cells[1..];
    let mut basis = DMatrix::zeros(n, kept.len());
    let mut basis_names = Vec::with_capacity(kept.len());
    for (c, &(e, l)) in kept.iter().enumerate() {
        let w = att_weights[c + 1];
        for i in 0..n {
            let hit = cohort_of[i] == Some(e) && p.time[i] - e == l && p.treated[i] == 1.0;
            basis[(i, c)] = if hit { 1.0 } else { 0.0 } - w;
        }
        basis_names.push(format!("att[e={e},l={l}]"));
    }

    let n_ctrl_cols = controls.ncols();
    let dataset = Dataset {
        outcome: DVector::from_vec(p.outcome.clone()),
        treatment: DVector::from_vec(p.treated.clone()),
        covariates: controls,
        covariate_names: names,
        covariate_kinds: vec![CovariateKind::Indicator; n_ctrl_cols],
        level_labels: vec![None; n_ctrl_cols],
        cluster_id: Some(p.unit_id.clone()),
        cells: None,
        effect_basis: Some(EffectBasis { names: basis_names, values: basis }),
        warnings,
    };
    dataset.validate()?;
    Ok(PanelDesign {
        dataset,
        cohorts,
        has_never_treated: has_never,
        times,
        dropped_cell: cells[0],
        cells,
        att_weights,
    })
}
