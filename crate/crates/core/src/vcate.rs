//! Variance of conditional treatment effects and sensitivity to the bound `C`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::baselines::{self, Interval};
use crate::design::{propensity_fit, DesignMatrices};
use crate::error::{Error, Result};
use crate::inference::{self, CiConfig, EstimateReport};
use crate::linalg::Projector;
use crate::warning::Warning;

struct LongPieces {
    delta: DVector<f64>,
    residuals: DVector<f64>,
    leverages: Vec<f64>,
    /// Rows of the pseudo-inverse for the interaction block (k x n).
    delta_map: DMatrix<f64>,
}

fn long_pieces(dm: &DesignMatrices, y: &DVector<f64>) -> Result<LongPieces> {
    let w = dm.long_matrix();
    let proj = Projector::new(&w);
    if !proj.is_full_rank() {
        return Err(Error::LongInfeasible);
    }
    let off = 1 + dm.x.ncols();
    let theta = proj.coefficients(y);
    let pinv = proj.pseudo_inverse();
    Ok(LongPieces {
        delta: theta.rows(off, dm.k()).clone_owned(),
        residuals: proj.residual(y),
        leverages: proj.leverages(),
        delta_map: pinv.rows(off, dm.k()).clone_owned(),
    })
}

/// `δ̂'Vxδ̂` from the long regression; biased upward.
pub fn vcate_plugin(dm: &DesignMatrices, y: &DVector<f64>) -> Result<f64> {
    let lp = long_pieces(dm, y)?;
    Ok(lp.delta.dot(&(&dm.vx * &lp.delta)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcateEstimate {
    pub plugin: f64,
    /// `tr(Vx·Var̂(δ̂))`.
    pub trace: f64,
    /// `plugin − trace`; may be negative.
    pub corrected: f64,
    pub clamped: f64,
    /// Delta-method standard error of `corrected`.
    pub se: f64,
}

/// Plug-in minus `tr(Vx·Var̂(δ̂))`, where `Var̂(δ̂)` is the sandwich with the
/// leave-one-out products `ε̂_i²/(1−h_ii)`.
pub fn vcate_corrected(dm: &DesignMatrices, y: &DVector<f64>) -> Result<VcateEstimate> {
    let lp = long_pieces(dm, y)?;
    let n = dm.n();
    let mut s2 = vec![0.0; n];
    for i in 0..n {
        let h = lp.leverages[i];
        if h >= 1.0 - 1e-10 {
            return Err(Error::SelfLeveraged { row: i + 1 });
        }
        s2[i] = lp.residuals[i].powi(2) / (1.0 - h);
    }
    let b = &lp.delta_map;
    let mut bs = b.clone();
    for i in 0..n {
        bs.column_mut(i).scale_mut(s2[i]);
    }
    let var_delta = &bs * b.transpose();
    let plugin = lp.delta.dot(&(&dm.vx * &lp.delta));
    let trace = (&dm.vx * &var_delta).trace();
    let grad = &dm.vx * &lp.delta;
    let se = (4.0 * grad.dot(&(&var_delta * &grad))).max(0.0).sqrt();
    let corrected = plugin - trace;
    Ok(VcateEstimate { plugin, trace, corrected, clamped: corrected.max(0.0), se })
}

/// `C = sqrt(2·max(upper, 0))` with `upper` the normal-approximation upper
/// confidence bound of the corrected VCATE.
pub fn suggested_bound(est: &VcateEstimate, alpha: f64) -> f64 {
    let upper = est.corrected + inference::z_two_sided(alpha) * est.se;
    (2.0 * upper.max(0.0)).sqrt()
}

#[derive(Debug, Clone)]
pub struct VcateReport {
    pub estimate: VcateEstimate,
    pub upper: f64,
    pub suggested_c: f64,
    pub rows_used: usize,
    pub warnings: Vec<Warning>,
}

impl VcateReport {
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        let e = &self.estimate;
        vec![
            ("vcate_plugin", e.plugin.to_string()),
            ("vcate_corrected", e.corrected.to_string()),
            ("vcate_clamped", e.clamped.to_string()),
            ("trace_correction", e.trace.to_string()),
            ("se", e.se.to_string()),
            ("upper", self.upper.to_string()),
            ("suggested_C", self.suggested_c.to_string()),
            ("rows_used", self.rows_used.to_string()),
        ]
    }
}

/// VCATE on the full sample, or on the overlap subsample when the long
/// regression is infeasible.
pub fn estimate_vcate(dm: &DesignMatrices, y: &DVector<f64>, alpha: f64) -> Result<VcateReport> {
    let mut warnings = dm.warnings.clone();
    let (estimate, rows_used) = match vcate_corrected(dm, y) {
        Ok(e) => (e, dm.n()),
        Err(Error::LongInfeasible) => {
            let p = propensity_fit(dm);
            let rows: Vec<usize> = (0..dm.n()).filter(|&i| p[i] * (1.0 - p[i]) > 1e-10).collect();
            if rows.is_empty() || rows.len() == dm.n() {
                return Err(Error::LongInfeasible);
            }
            let sub = dm.subsample(&rows)?;
            let ys = DVector::from_fn(rows.len(), |i, _| y[rows[i]]);
            warnings.push(Warning::OverlapSubsample { dropped_rows: dm.n() - rows.len() });
            (vcate_corrected(&sub, &ys)?, rows.len())
        }
        Err(e) => return Err(e),
    };
    let upper = estimate.corrected + inference::z_two_sided(alpha) * estimate.se;
    Ok(VcateReport { suggested_c: suggested_bound(&estimate, alpha), estimate, upper, rows_used, warnings })
}

/// Parses `lo:hi:step` into an inclusive ascending grid.
pub fn parse_c_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("C grid must be lo:hi:step, got `{spec}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    let (lo, hi, step) = (v[0], v[1], v[2]);
    if !(lo >= 0.0 && hi >= lo && step > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(bad());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| lo + step * i as f64).collect())
}

#[derive(Debug, Clone)]
pub struct SensitivityRow {
    pub c: f64,
    pub regulate: std::result::Result<EstimateReport, String>,
    /// Short-regression estimate with its bias-corrected interval.
    pub short_bc: std::result::Result<(f64, Interval), String>,
}

#[derive(Debug, Clone)]
pub struct SensitivityCurve {
    pub rows: Vec<SensitivityRow>,
    /// Smallest `C` whose regulaTE interval contains zero.
    pub breakdown_c: Option<f64>,
}

impl SensitivityCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["C", "estimator", "beta_hat", "ci_lo", "ci_hi", "half_length", "maxbias", "sd"])?;
        for r in &self.rows {
            let c = r.c.to_string();
            match &r.regulate {
                Ok(rep) => w.write_record([
                    c.clone(),
                    "regulaTE".into(),
                    rep.beta_hat.to_string(),
                    rep.ci_lo.to_string(),
                    rep.ci_hi.to_string(),
                    rep.half_length.to_string(),
                    rep.maxbias.to_string(),
                    rep.sd.to_string(),
                ])?,
                Err(_) => w.write_record([c.as_str(), "regulaTE", "NA", "NA", "NA", "NA", "NA", "NA"])?,
            }
            match &r.short_bc {
                Ok((b, ci)) => w.write_record([
                    c.clone(),
                    "short_bc".into(),
                    b.to_string(),
                    ci.lo.to_string(),
                    ci.hi.to_string(),
                    ci.half_length.to_string(),
                    ci.maxbias.to_string(),
                    ci.sd.to_string(),
                ])?,
                Err(_) => w.write_record([c.as_str(), "short_bc", "NA", "NA", "NA", "NA", "NA", "NA"])?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the interval pipeline for every `C` on the grid. Failures at a
/// single `C` are recorded in its row.
pub fn sensitivity(dm: &DesignMatrices, y: &DVector<f64>, grid: &[f64], cfg: &CiConfig) -> Result<SensitivityCurve> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(Error::Config("C grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("C grid must be strictly ascending".into()));
    }
    let init = inference::initial_estimator(dm, y, cfg.initial)?;
    let short = baselines::short_fit(dm, y);
    let rows: Vec<SensitivityRow> = grid
        .par_iter()
        .map(|&c| {
            let cfg_c = CiConfig { c, ..cfg.clone() };
            let regulate = inference::feasible_ci_with(dm, y, &cfg_c, &init).map_err(|e| e.to_string());
            let short_bc = match &short {
                Ok(f) => inference::variance_robust(
                    &f.weights,
                    &init.residuals,
                    cfg.se_kind,
                    init.sigma_hat,
                    dm.cluster_id.as_deref(),
                )
                .and_then(|v| baselines::bias_corrected_ci(f, dm, c, cfg.alpha, v))
                .map(|ci| (f.beta_hat, ci))
                .map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            SensitivityRow { c, regulate, short_bc }
        })
        .collect();
    let breakdown_c = rows
        .iter()
        .find(|r| matches!(&r.regulate, Ok(rep) if rep.ci_lo <= 0.0 && rep.ci_hi >= 0.0))
        .map(|r| r.c);
    Ok(SensitivityCurve { rows, breakdown_c })
}
