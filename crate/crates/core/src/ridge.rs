//! Penalized propensity regression and the frontier weights `a_λ`.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::baselines;
use crate::bias;
use crate::design::{cell_propensity, DesignMatrices};
use crate::error::{Error, Result};
use crate::linalg::{ridgeless_operator, spd_solve, sym_condition_number};

/// Penalty level; `Infinite` is the short regression exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Finite(f64),
    Infinite,
}

impl Lambda {
    pub fn value(self) -> f64 {
        match self {
            Lambda::Finite(l) => l,
            Lambda::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Finite(l) => write!(f, "{l}"),
            Lambda::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub lambda: Lambda,
    pub pi1: DVector<f64>,
    pub pi2: DVector<f64>,
    /// `a = D̃ / (D̃'D)`.
    pub weights: DVector<f64>,
    pub dtilde: DVector<f64>,
}

impl RidgeFit {
    pub fn beta_hat(&self, y: &DVector<f64>) -> f64 {
        self.weights.dot(y)
    }

    /// `‖a‖²`, the variance of `β̂` per unit error variance under homoskedasticity.
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.norm_squared()
    }

    pub(crate) fn from_dtilde(
        lambda: Lambda,
        pi1: DVector<f64>,
        pi2: DVector<f64>,
        dtilde: DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<Self> {
        let dd = dtilde.dot(d);
        if !(dd > 1e-12 * d.norm_squared().max(1.0)) {
            return Err(Error::DegenerateInstrument);
        }
        let weights = &dtilde / dd;
        Ok(RidgeFit { lambda, pi1, pi2, weights, dtilde })
    }
}

/// Solves `min ‖D − Xπ₁ − (D∘Xt)π₂‖² + λ π₂'Vx π₂` by partialling out `X`.
pub fn penalized_propensity(dm: &DesignMatrices, lambda: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let (pi1, pi2, _) = propensity_parts(dm, lambda)?;
    Ok((pi1, pi2))
}

fn propensity_parts(
    dm: &DesignMatrices,
    lambda: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be positive and finite, got {lambda}")));
    }
    let g = dm.g_residual();
    let r = dm.d_residual();
    let m = g.tr_mul(g) + &dm.vx * lambda;
    let pi2 = spd_solve(&m, &g.tr_mul(r))?;
    let pi1 = dm.x_projector().coefficients(&(&dm.d - &dm.dxt * &pi2));
    let dtilde = r - g * &pi2;
    Ok((pi1, pi2, dtilde))
}

pub fn fit_at(dm: &DesignMatrices, lambda: Lambda) -> Result<RidgeFit> {
    match lambda {
        Lambda::Infinite => baselines::short_ridge_fit(dm),
        Lambda::Finite(0.0) => fit_limit_zero(dm),
        Lambda::Finite(l) => {
            let (pi1, pi2, dtilde) = propensity_parts(dm, l)?;
            RidgeFit::from_dtilde(lambda, pi1, pi2, dtilde, &dm.d)
        }
    }
}

/// The `λ → 0` limit of the frontier.
///
/// The weights are the first row of the minimum-penalty least-squares
/// operator of `Y` on `[D, X, D∘Xt]` with penalty `blkdiag(0, 0, Vx)`. With
/// full overlap this is the long regression; otherwise cells without overlap
/// get zero weight and the estimate is the long regression on the overlap
/// subsample. `dtilde` is reported normalized (`dtilde = weights`).
pub fn fit_limit_zero(dm: &DesignMatrices) -> Result<RidgeFit> {
    let p = dm.x.ncols();
    let k = dm.k();
    let w = dm.long_matrix();
    let pen = dm.long_penalty();
    let op = ridgeless_operator(&w, &pen, &[0]).ok_or(Error::NoOverlap)?;
    let weights: DVector<f64> = op.row(0).transpose();

    let wp = w.columns(1, p + k).clone_owned();
    let pen_p = pen.view((1, 1), (p + k, p + k)).clone_owned();
    let op_p = ridgeless_operator(&wp, &pen_p, &[]).ok_or(Error::NoOverlap)?;
    let pi = &op_p * &dm.d;
    let pi1 = pi.rows(0, p).clone_owned();
    let pi2 = pi.rows(p, k).clone_owned();

    let ad = weights.dot(&dm.d);
    if !(ad.is_finite() && (ad - 1.0).abs() < 1e-6) {
        return Err(Error::NoOverlap);
    }
    Ok(RidgeFit { lambda: Lambda::Finite(0.0), pi1, pi2, dtilde: weights.clone(), weights })
}

/// Frontier weights for a saturated design from the cell propensities.
pub fn ridge_weights_discrete(dm: &DesignMatrices, lambda: f64) -> Result<DVector<f64>> {
    if !dm.saturated {
        return Err(Error::NotSaturated("closed-form weights need a saturated design".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let p = cell_propensity(dm)?;
    let r = &dm.d - p;
    let mut z = dm.xt.clone();
    for i in 0..dm.n() {
        z.row_mut(i).scale_mut(r[i]);
    }
    let pi2 = if lambda.is_finite() {
        spd_solve(&(z.tr_mul(&z) + &dm.vx * lambda), &z.tr_mul(&r))?
    } else {
        DVector::zeros(dm.k())
    };
    let shrink = DVector::from_fn(dm.n(), |i, _| 1.0 - dm.xt.row(i).dot(&pi2.transpose()));
    let a = r.component_mul(&shrink);
    let ad = a.dot(&dm.d);
    if !(ad > 0.0) {
        return Err(Error::DegenerateInstrument);
    }
    Ok(a / ad)
}

/// Natural scale of `λ`: `tr(G̃'G̃) / tr(Vx)`, so that `λ = 1` weighs fit and
/// penalty comparably.
pub fn lambda_scale(dm: &DesignMatrices) -> f64 {
    let g = dm.g_residual();
    let num: f64 = g.iter().map(|v| v * v).sum();
    let den = dm.vx.trace();
    let s = num / den;
    if s.is_finite() && s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Condition number of the ridge system `G̃'G̃ + λVx`.
pub fn ridge_condition(dm: &DesignMatrices, lambda: f64) -> f64 {
    let g = dm.g_residual();
    sym_condition_number(&(g.tr_mul(g) + &dm.vx * lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub sd: f64,
    pub maxbias: f64,
    pub beta_hat: f64,
}

/// Evaluates the frontier on a grid of penalties. `sd = σ‖a_λ‖`.
pub fn ridge_path(
    dm: &DesignMatrices,
    y: &DVector<f64>,
    lambdas: &[f64],
    c: f64,
    sigma: f64,
) -> Result<Vec<PathPoint>> {
    lambdas
        .par_iter()
        .map(|&l| {
            let lam = if l.is_infinite() { Lambda::Infinite } else { Lambda::Finite(l) };
            let fit = fit_at(dm, lam)?;
            Ok(PathPoint {
                lambda: l,
                sd: sigma * fit.weight_norm_sq().sqrt(),
                maxbias: bias::maxbias_ridge(&fit, dm, c)?,
                beta_hat: fit.beta_hat(y),
            })
        })
        .collect()
}

pub fn write_path_csv<W: Write>(path: &[PathPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "sd", "maxbias", "beta_hat"])?;
    for pt in path {
        w.write_record([
            pt.lambda.to_string(),
            pt.sd.to_string(),
            pt.maxbias.to_string(),
            pt.beta_hat.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
