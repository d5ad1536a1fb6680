//! Comparison estimators: short, long, trimmed and inverse-propensity weighting.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;

use crate::bias::{self, TrimRule};
use crate::design::{cell_propensity, propensity_fit, DesignMatrices, Estimand};
use crate::error::{Error, Result};
use crate::inference::{self, CiConfig, InitialFit};
use crate::linalg::Projector;
use crate::ridge::{Lambda, RidgeFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Short,
    Long,
    Trimmed,
    IpwAte,
    IpwAtt,
    IpwAtu,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Short => "short",
            BaselineKind::Long => "long",
            BaselineKind::Trimmed => "trimmed",
            BaselineKind::IpwAte => "ipw_ate",
            BaselineKind::IpwAtt => "ipw_att",
            BaselineKind::IpwAtu => "ipw_atu",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BaselineFit {
    pub kind: BaselineKind,
    pub weights: DVector<f64>,
    pub beta_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub half_length: f64,
    pub maxbias: f64,
    pub sd: f64,
}

/// Short regression as the `λ = ∞` end of the frontier: `a = H_X D / (D'H_X D)`.
pub fn short_ridge_fit(dm: &DesignMatrices) -> Result<RidgeFit> {
    let r = dm.d_residual().clone();
    let dd = r.dot(&dm.d);
    if !(dd > 1e-10 * dm.d.norm_squared()) {
        return Err(Error::NoResidualTreatment);
    }
    let pi1 = dm.x_projector().coefficients(&dm.d);
    RidgeFit::from_dtilde(Lambda::Infinite, pi1, DVector::zeros(dm.k()), r, &dm.d)
}

pub fn short_fit(dm: &DesignMatrices, y: &DVector<f64>) -> Result<BaselineFit> {
    let fit = short_ridge_fit(dm)?;
    Ok(BaselineFit { kind: BaselineKind::Short, beta_hat: fit.beta_hat(y), weights: fit.weights })
}

/// Weights of the `D` coefficient in the long regression of `Y` on `[D, X, D∘Xt]`.
pub fn long_weights(dm: &DesignMatrices) -> Result<DVector<f64>> {
    let w = dm.long_matrix();
    if !Projector::new(&w).is_full_rank() {
        return Err(Error::LongInfeasible);
    }
    let controls = w.columns(1, w.ncols() - 1).clone_owned();
    let r = Projector::new(&controls).residual(&dm.d);
    let dd = r.dot(&dm.d);
    if !(dd > 0.0) {
        return Err(Error::LongInfeasible);
    }
    Ok(r / dd)
}

pub fn long_fit(dm: &DesignMatrices, y: &DVector<f64>) -> Result<BaselineFit> {
    let weights = long_weights(dm)?;
    Ok(BaselineFit { kind: BaselineKind::Long, beta_hat: weights.dot(y), weights })
}

#[derive(Debug, Clone)]
pub struct TrimmedWeights {
    pub weights: DVector<f64>,
    pub kept: Vec<usize>,
}

/// Long-regression weights on the rows kept by `rule`, zero elsewhere.
/// Saturated designs use counted cell propensities so that cells are kept or
/// dropped whole.
pub fn trimmed_weights(dm: &DesignMatrices, rule: &TrimRule) -> Result<TrimmedWeights> {
    let p = if dm.saturated { cell_propensity(dm)? } else { propensity_fit(dm) };
    let kept = rule.keep(&p);
    if kept.is_empty() {
        return Err(Error::TrimmedSample("every observation".into()));
    }
    let sub = dm.subsample(&kept)?;
    let a_sub = long_weights(&sub)?;
    let mut weights = DVector::zeros(dm.n());
    for (j, &i) in kept.iter().enumerate() {
        weights[i] = a_sub[j];
    }
    Ok(TrimmedWeights { weights, kept })
}

pub fn trimmed_fit(dm: &DesignMatrices, y: &DVector<f64>, rule: &TrimRule) -> Result<BaselineFit> {
    let tw = trimmed_weights(dm, rule)?;
    Ok(BaselineFit { kind: BaselineKind::Trimmed, beta_hat: tw.weights.dot(y), weights: tw.weights })
}

/// Inverse-propensity weighting with cell propensities on a saturated design.
pub fn ipw_fit(dm: &DesignMatrices, y: &DVector<f64>, estimand: Estimand) -> Result<BaselineFit> {
    if !dm.saturated {
        return Err(Error::NotSaturated("IPW needs cell propensities".into()));
    }
    let p = cell_propensity(dm)?;
    let n = dm.n() as f64;
    let share = dm.d.sum() / n;
    let mut a = DVector::zeros(dm.n());
    for i in 0..dm.n() {
        let (pi, r) = (p[i], dm.d[i] - p[i]);
        let den = match estimand {
            Estimand::Ate => pi * (1.0 - pi),
            Estimand::Att => (1.0 - pi) * share,
            Estimand::Atu => pi * (1.0 - share),
        };
        if den <= 0.0 {
            return Err(Error::LongInfeasible);
        }
        a[i] = r / (den * n);
    }
    let kind = match estimand {
        Estimand::Ate => BaselineKind::IpwAte,
        Estimand::Att => BaselineKind::IpwAtt,
        Estimand::Atu => BaselineKind::IpwAtu,
    };
    Ok(BaselineFit { kind, beta_hat: a.dot(y), weights: a })
}

/// `β̂ ± cv_α(maxbias/√V̂)·√V̂` with the worst-case bias of the fit's weights.
pub fn bias_corrected_ci(fit: &BaselineFit, dm: &DesignMatrices, c: f64, alpha: f64, v_hat: f64) -> Result<Interval> {
    let maxbias = bias::maxbias_general(&fit.weights, dm, c)?;
    let sd = v_hat.sqrt();
    let half = inference::flci_half_length(maxbias, sd, alpha);
    Ok(Interval { lo: fit.beta_hat - half, hi: fit.beta_hat + half, half_length: half, maxbias, sd })
}

/// Conventional `β̂ ± z·√V̂` interval; `maxbias` is still reported.
pub fn naive_ci(fit: &BaselineFit, dm: &DesignMatrices, c: f64, alpha: f64, v_hat: f64) -> Result<Interval> {
    let maxbias = bias::maxbias_general(&fit.weights, dm, c)?;
    let sd = v_hat.sqrt();
    let half = inference::z_two_sided(alpha) * sd;
    Ok(Interval { lo: fit.beta_hat - half, hi: fit.beta_hat + half, half_length: half, maxbias, sd })
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub estimator: String,
    /// `None` when the estimator is infeasible on this design.
    pub values: Option<(f64, Interval)>,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.estimator == name)
    }

    /// CSV with CI lengths normalized by the regulaTE length.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let reference = self
            .row("regulaTE")
            .and_then(|r| r.values.map(|(_, ci)| ci.hi - ci.lo))
            .unwrap_or(f64::NAN);
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["estimator", "beta_hat", "sd", "maxbias", "ci_lo", "ci_hi", "ci_length_ratio"])?;
        for r in &self.rows {
            match r.values {
                Some((b, ci)) => w.write_record([
                    r.estimator.clone(),
                    b.to_string(),
                    ci.sd.to_string(),
                    ci.maxbias.to_string(),
                    ci.lo.to_string(),
                    ci.hi.to_string(),
                    ((ci.hi - ci.lo) / reference).to_string(),
                ])?,
                None => {
                    let mut rec = vec![r.estimator.clone()];
                    rec.extend(std::iter::repeat_n("infeasible".to_string(), 6));
                    w.write_record(&rec)?
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// regulaTE and the baselines on the same data, all with variance from the
/// same initial residuals.
pub fn compare(dm: &DesignMatrices, y: &DVector<f64>, cfg: &CiConfig, trim: &TrimRule) -> Result<ComparisonTable> {
    let init = inference::initial_estimator(dm, y, cfg.initial)?;
    compare_with(dm, y, cfg, trim, &init)
}

pub fn compare_with(
    dm: &DesignMatrices,
    y: &DVector<f64>,
    cfg: &CiConfig,
    trim: &TrimRule,
    init: &InitialFit,
) -> Result<ComparisonTable> {
    let report = inference::feasible_ci_with(dm, y, cfg, init)?;
    let var = |a: &DVector<f64>| {
        inference::variance_robust(a, &init.residuals, cfg.se_kind, init.sigma_hat, dm.cluster_id.as_deref())
    };
    let mut rows = vec![ComparisonRow {
        estimator: "regulaTE".into(),
        values: Some((
            report.beta_hat,
            Interval {
                lo: report.ci_lo,
                hi: report.ci_hi,
                half_length: report.half_length,
                maxbias: report.maxbias,
                sd: report.sd,
            },
        )),
        note: None,
    }];
    let mut push = |name: &str, fit: Result<BaselineFit>, corrected: bool| -> Result<()> {
        let row = match fit {
            Ok(f) => {
                let v = var(&f.weights)?;
                let ci = if corrected {
                    bias_corrected_ci(&f, dm, cfg.c, cfg.alpha, v)?
                } else {
                    naive_ci(&f, dm, cfg.c, cfg.alpha, v)?
                };
                ComparisonRow { estimator: name.into(), values: Some((f.beta_hat, ci)), note: None }
            }
            Err(e) => ComparisonRow { estimator: name.into(), values: None, note: Some(e.to_string()) },
        };
        rows.push(row);
        Ok(())
    };
    push("short", short_fit(dm, y), false)?;
    push("short_bc", short_fit(dm, y), true)?;
    push("long", long_fit(dm, y), false)?;
    push("trimmed", trimmed_fit(dm, y, trim), false)?;
    push("trimmed_bc", trimmed_fit(dm, y, trim), true)?;
    if dm.saturated {
        push(&format!("ipw_{}", dm.estimand), ipw_fit(dm, y, dm.estimand), false)?;
    }
    Ok(ComparisonTable { rows })
}
