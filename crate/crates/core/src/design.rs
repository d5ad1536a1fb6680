//! Fixed-design objects for a target estimand.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{CellIndex, CovariateKind, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{weighted_mean, Projector, SymPinv, PINV_REL_TOL};
use crate::warning::Warning;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimand {
    Ate,
    Att,
    Atu,
}

impl Estimand {
    /// Row weights defining the reference population for demeaning.
    pub fn population_weights(self, d: &DVector<f64>) -> Vec<f64> {
        d.iter()
            .map(|&di| match self {
                Estimand::Ate => 1.0,
                Estimand::Att => di,
                Estimand::Atu => 1.0 - di,
            })
            .collect()
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Ate => "ate",
            Estimand::Att => "att",
            Estimand::Atu => "atu",
        })
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ate" => Ok(Estimand::Ate),
            "att" => Ok(Estimand::Att),
            "atu" => Ok(Estimand::Atu),
            other => Err(Error::Config(format!("unknown estimand `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub d: DVector<f64>,
    /// Controls with the intercept in column 0.
    pub x: DMatrix<f64>,
    /// Heterogeneity dictionary demeaned over the estimand population.
    pub xt: DMatrix<f64>,
    /// `D ∘ Xt`.
    pub dxt: DMatrix<f64>,
    /// `Xt'Xt / n`.
    pub vx: DMatrix<f64>,
    pub estimand: Estimand,
    pub x_names: Vec<String>,
    pub effect_names: Vec<String>,
    pub cells: Option<CellIndex>,
    /// Controls are exactly the indicators of `cells` and the dictionary equals the controls.
    pub saturated: bool,
    pub cluster_id: Option<Vec<i64>>,
    pub warnings: Vec<Warning>,
    dict_raw: DMatrix<f64>,
    x_proj: Projector,
    d_res: DVector<f64>,
    g_res: DMatrix<f64>,
    vx_pinv: SymPinv,
}

impl DesignMatrices {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        d: DVector<f64>,
        x: DMatrix<f64>,
        x_names: Vec<String>,
        dict_raw: DMatrix<f64>,
        effect_names: Vec<String>,
        estimand: Estimand,
        cells: Option<CellIndex>,
        saturated: bool,
        cluster_id: Option<Vec<i64>>,
    ) -> Result<Self> {
        let n = d.len();
        let k = dict_raw.ncols();
        let treated = d.iter().filter(|&&v| v == 1.0).count();
        match estimand {
            Estimand::Att if treated == 0 => {
                return Err(Error::InvalidData("ATT requires at least one treated unit".into()))
            }
            Estimand::Atu if treated == n => {
                return Err(Error::InvalidData("ATU requires at least one untreated unit".into()))
            }
            _ => {}
        }
        let w = estimand.population_weights(&d);
        let mut xt = dict_raw.clone();
        for j in 0..k {
            let m = weighted_mean(dict_raw.column(j).iter().copied(), &w);
            xt.column_mut(j).add_scalar_mut(-m);
        }
        let mut dxt = xt.clone();
        for i in 0..n {
            if d[i] == 0.0 {
                dxt.row_mut(i).fill(0.0);
            }
        }
        let vx = xt.tr_mul(&xt) / n as f64;
        let vx = (&vx + vx.transpose()) * 0.5;

        let mut warnings = Vec::new();
        let x_proj = Projector::new(&x);
        if !x_proj.is_full_rank() {
            warnings.push(Warning::ControlsRankDeficient { rank: x_proj.rank(), dim: x_proj.dim() });
        }
        let vx_pinv = SymPinv::new(&vx, PINV_REL_TOL);
        if vx_pinv.rank < k {
            warnings.push(Warning::VxRankDeficient { rank: vx_pinv.rank, dim: k });
        }
        let d_res = x_proj.residual(&d);
        let g_res = x_proj.residual_matrix(&dxt);
        Ok(DesignMatrices {
            d,
            x,
            xt,
            dxt,
            vx,
            estimand,
            x_names,
            effect_names,
            cells,
            saturated,
            cluster_id,
            warnings,
            dict_raw,
            x_proj,
            d_res,
            g_res,
            vx_pinv,
        })
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Number of heterogeneity directions.
    pub fn k(&self) -> usize {
        self.xt.ncols()
    }

    pub fn x_projector(&self) -> &Projector {
        &self.x_proj
    }

    /// `H_X D`.
    pub fn d_residual(&self) -> &DVector<f64> {
        &self.d_res
    }

    /// `H_X (D ∘ Xt)`.
    pub fn g_residual(&self) -> &DMatrix<f64> {
        &self.g_res
    }

    pub fn vx_pinv(&self) -> &SymPinv {
        &self.vx_pinv
    }

    pub fn dictionary_raw(&self) -> &DMatrix<f64> {
        &self.dict_raw
    }

    /// Long-regression design `[D, X, D∘Xt]`.
    pub fn long_matrix(&self) -> DMatrix<f64> {
        let (n, p, k) = (self.n(), self.x.ncols(), self.k());
        let mut w = DMatrix::zeros(n, 1 + p + k);
        w.set_column(0, &self.d);
        w.columns_mut(1, p).copy_from(&self.x);
        w.columns_mut(1 + p, k).copy_from(&self.dxt);
        w
    }

    /// Penalty `blkdiag(0, 0, Vx)` matching [`DesignMatrices::long_matrix`].
    pub fn long_penalty(&self) -> DMatrix<f64> {
        let (p, k) = (self.x.ncols(), self.k());
        let mut pen = DMatrix::zeros(1 + p + k, 1 + p + k);
        pen.view_mut((1 + p, 1 + p), (k, k)).copy_from(&self.vx);
        pen
    }

    /// Design rebuilt on a subset of rows. Controls and dictionary columns
    /// that are linearly dependent on earlier ones (for the dictionary, on
    /// earlier ones and a constant) within the subset are dropped.
    pub fn subsample(&self, rows: &[usize]) -> Result<DesignMatrices> {
        let m = rows.len();
        let d = DVector::from_fn(m, |i, _| self.d[rows[i]]);
        let treated = d.iter().filter(|&&v| v == 1.0).count();
        if treated == 0 || treated == m {
            return Err(Error::TrimmedSample(
                "all treated or all untreated units from the retained sample".into(),
            ));
        }
        let x_sub = DMatrix::from_fn(m, self.x.ncols(), |i, j| self.x[(rows[i], j)]);
        let x_keep = independent_columns(&x_sub, None);
        let dict_sub = DMatrix::from_fn(m, self.k(), |i, j| self.dict_raw[(rows[i], j)]);
        let k_keep = independent_columns(&dict_sub, Some(&DVector::repeat(m, 1.0)));
        let x = DMatrix::from_fn(m, x_keep.len(), |i, j| self.x[(rows[i], x_keep[j])]);
        let dict = DMatrix::from_fn(m, k_keep.len(), |i, j| self.dict_raw[(rows[i], k_keep[j])]);
        let cells = self.cells.as_ref().map(|c| CellIndex {
            ids: rows.iter().map(|&r| c.ids[r]).collect(),
            labels: c.labels.clone(),
        });
        DesignMatrices::from_parts(
            d,
            x,
            x_keep.iter().map(|&j| self.x_names[j].clone()).collect(),
            dict,
            k_keep.iter().map(|&j| self.effect_names[j].clone()).collect(),
            self.estimand,
            cells,
            self.saturated,
            self.cluster_id.as_ref().map(|c| rows.iter().map(|&r| c[r]).collect()),
        )
    }

    /// Writes treatment, intercept, controls and interactions as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["treatment".to_string()];
        header.extend(self.x_names.iter().cloned());
        header.extend(self.effect_names.iter().map(|n| format!("d_x_{n}")));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.d[i].to_string()];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            rec.extend(self.dxt.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Greedy left-to-right selection of linearly independent columns.
fn independent_columns(m: &DMatrix<f64>, base: Option<&DVector<f64>>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..m.ncols() {
        let col = m.column(j).clone_owned();
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let mut cols: Vec<DVector<f64>> = base.into_iter().cloned().collect();
        cols.extend(kept.iter().map(|&c| m.column(c).clone_owned()));
        let resid = if cols.is_empty() {
            col.clone()
        } else {
            let b = DMatrix::from_columns(&cols);
            Projector::new(&b).residual(&col)
        };
        if resid.norm() > 1e-9 * norm {
            kept.push(j);
        }
    }
    kept
}

/// Builds the design for `estimand`. The heterogeneity dictionary is the
/// dataset's effect basis when present, otherwise its covariates.
pub fn build_design(ds: &Dataset, estimand: Estimand) -> Result<DesignMatrices> {
    ds.validate()?;
    let n = ds.n();
    let p = ds.covariates.ncols();
    let mut x = DMatrix::zeros(n, p + 1);
    x.column_mut(0).fill(1.0);
    x.columns_mut(1, p).copy_from(&ds.covariates);
    let mut x_names = vec!["intercept".to_string()];
    x_names.extend(ds.covariate_names.iter().cloned());
    let (dict, effect_names) = match &ds.effect_basis {
        Some(b) => (b.values.clone(), b.names.clone()),
        None => (ds.covariates.clone(), ds.covariate_names.clone()),
    };
    let saturated = match (&ds.cells, &ds.effect_basis) {
        (Some(c), None) => {
            ds.covariate_kinds.iter().all(|k| *k == CovariateKind::Indicator) && p + 1 == c.count()
        }
        _ => false,
    };
    let mut dm = DesignMatrices::from_parts(
        ds.treatment.clone(),
        x,
        x_names,
        dict,
        effect_names,
        estimand,
        ds.cells.clone(),
        saturated,
        ds.cluster_id.clone(),
    )?;
    let mut warnings = ds.warnings.clone();
    warnings.append(&mut dm.warnings);
    dm.warnings = warnings;
    Ok(dm)
}

/// Linear-probability propensity `P_X D`.
pub fn propensity_fit(dm: &DesignMatrices) -> DVector<f64> {
    &dm.d - dm.d_residual()
}

/// Treated fraction of each row's cell, computed by counting.
pub fn cell_propensity(dm: &DesignMatrices) -> Result<DVector<f64>> {
    let cells = dm
        .cells
        .as_ref()
        .ok_or_else(|| Error::NotSaturated("no cell structure".into()))?;
    let m = cells.count();
    let mut treated = vec![0.0; m];
    let mut size = vec![0.0; m];
    for (i, &c) in cells.ids.iter().enumerate() {
        size[c] += 1.0;
        treated[c] += dm.d[i];
    }
    Ok(DVector::from_fn(dm.n(), |i, _| {
        let c = cells.ids[i];
        treated[c] / size[c]
    }))
}
