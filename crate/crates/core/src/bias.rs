//! Worst-case bias over the heterogeneity ellipsoid `δ'Vxδ ≤ C²`.

use nalgebra::DVector;

use crate::baselines;
use crate::design::DesignMatrices;
use crate::error::{Error, Result};
use crate::linalg::{column_norms, PINV_REL_TOL};
use crate::ridge::{Lambda, RidgeFit};

/// Bound `C` on the standard deviation of the conditional treatment effect.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HeterogeneityBound(f64);

impl HeterogeneityBound {
    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c >= 0.0 {
            Ok(HeterogeneityBound(c))
        } else {
            Err(Error::Config(format!("heterogeneity bound must be finite and >= 0, got {c}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_unbiased(a: &DVector<f64>, dm: &DesignMatrices) -> Result<()> {
    let ad = a.dot(&dm.d);
    let ax = dm.x.tr_mul(a).amax();
    if (ad - 1.0).abs() <= 1e-8 && ax <= 1e-8 {
        Ok(())
    } else {
        Err(Error::WeightsNotUnbiased)
    }
}

/// `sqrt(q'Vx⁺q)` with `q = (D∘Xt)'a`, or `+∞` when `q` leaves the range of `Vx`.
fn bias_norm(a: &DVector<f64>, dm: &DesignMatrices) -> f64 {
    let q = dm.dxt.tr_mul(a);
    let f = dm.vx_pinv();
    if f.null_basis.ncols() > 0 {
        let off = f.null_basis.tr_mul(&q).norm();
        if off > 1e-8 * (1.0 + q.norm()) {
            return f64::INFINITY;
        }
    }
    q.dot(&(&f.pinv * &q)).max(0.0).sqrt()
}

/// `C·sqrt(q'Vx⁻¹q)` for any weights with `a'D = 1` and `a'X = 0`.
pub fn maxbias_general(a: &DVector<f64>, dm: &DesignMatrices, c: f64) -> Result<f64> {
    let c = HeterogeneityBound::new(c)?.value();
    check_unbiased(a, dm)?;
    if c == 0.0 {
        return Ok(0.0);
    }
    Ok(c * bias_norm(a, dm))
}

/// Worst-case bias of a frontier fit.
///
/// For finite `λ > 0` the first-order conditions give `(D∘Xt)'a = λVxπ₂/(D̃'D)`,
/// so the bias is `C·a'(Xπ₁ + (D∘Xt)π₂)/sqrt(π₂'Vxπ₂)`. Falls back to the
/// general formula at the endpoints or when `π₂'Vxπ₂` is negligible.
pub fn maxbias_ridge(fit: &RidgeFit, dm: &DesignMatrices, c: f64) -> Result<f64> {
    let c = HeterogeneityBound::new(c)?.value();
    if !matches!(fit.lambda, Lambda::Finite(l) if l > 0.0) {
        return maxbias_general(&fit.weights, dm, c);
    }
    check_unbiased(&fit.weights, dm)?;
    let quad = fit.pi2.dot(&(&dm.vx * &fit.pi2));
    if quad <= 1e-14 {
        return maxbias_general(&fit.weights, dm, c);
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    let a = &fit.weights;
    let num = a.dot(&(&dm.x * &fit.pi1)) + a.dot(&(&dm.dxt * &fit.pi2));
    Ok(c * num.max(0.0) / quad.sqrt())
}

/// Trimming rule keeping rows with `p(1−p) > threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimRule {
    pub threshold: f64,
}

impl Default for TrimRule {
    fn default() -> Self {
        TrimRule { threshold: 0.09 }
    }
}

impl TrimRule {
    pub fn new(threshold: f64) -> Result<Self> {
        if (0.0..0.25).contains(&threshold) {
            Ok(TrimRule { threshold })
        } else {
            Err(Error::Config(format!("trim threshold must lie in [0, 0.25), got {threshold}")))
        }
    }

    /// Rows kept by the rule given the linear-probability propensity.
    pub fn keep(&self, p: &DVector<f64>) -> Vec<usize> {
        (0..p.len()).filter(|&i| p[i] * (1.0 - p[i]) > self.threshold).collect()
    }
}

/// Worst-case bias of the trimmed long regression, measured against the
/// full-sample `Vx` and interactions.
pub fn maxbias_trimmed(dm: &DesignMatrices, rule: &TrimRule, c: f64) -> Result<f64> {
    let tw = baselines::trimmed_weights(dm, rule)?;
    maxbias_general(&tw.weights, dm, c)
}

/// KKT maximizer of `a'(D∘Xt)δ` over `δ'Vxδ ≤ C²`.
pub fn worst_case_delta(a: &DVector<f64>, dm: &DesignMatrices, c: f64) -> DVector<f64> {
    let q = dm.dxt.tr_mul(a);
    let v = &dm.vx_pinv().pinv * &q;
    let s = q.dot(&v);
    if s > 0.0 {
        v * (c / s.sqrt())
    } else {
        DVector::zeros(dm.k())
    }
}

#[derive(Debug, Clone)]
pub struct Feasibility {
    pub feasible: bool,
    /// `‖[D, X, D∘Xt]'a − e₁‖∞` at the least-squares solution.
    pub residual: f64,
    /// Minimum-norm weights satisfying the constraints, when feasible.
    pub witness: Option<DVector<f64>>,
}

/// Whether some linear estimator is unbiased for every `(β, γ, δ)`: solves
/// `a'D = 1, a'X = 0, a'(D∘Xt) = 0` in the least-squares sense.
pub fn check_unbiased_feasible(dm: &DesignMatrices) -> Feasibility {
    let n = dm.n();
    let w = dm.long_matrix();
    let m = w.ncols();
    let scales: Vec<f64> = column_norms(&w).into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    let mut ws = w.clone();
    for (j, s) in scales.iter().enumerate() {
        ws.column_mut(j).scale_mut(1.0 / s);
    }
    // Scaled constraint: ws'a = S⁻¹e₁.
    let mut b = DVector::zeros(m);
    b[0] = 1.0 / scales[0];
    let svd = ws.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let smax = svd.singular_values.max();
    let mut a = DVector::zeros(n);
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if smax > 0.0 && s * s > PINV_REL_TOL * smax * smax {
            let coef = v_t.row(i).transpose().dot(&b) / s;
            a += u.column(i) * coef;
        }
    }
    let mut target = DVector::zeros(m);
    target[0] = 1.0;
    let residual = (w.tr_mul(&a) - target).amax();
    let feasible = residual <= 1e-8;
    Feasibility { feasible, residual, witness: feasible.then_some(a) }
}
