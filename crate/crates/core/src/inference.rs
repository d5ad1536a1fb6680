//! Bias-aware confidence intervals: critical values, the optimal penalty,
//! the initial estimator and variance estimation.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::bias;
use crate::design::{propensity_fit, DesignMatrices, Estimand};
use crate::error::{Error, Result};
use crate::linalg::{Projector, SymPinv, PINV_REL_TOL};
use crate::ridge::{self, Lambda, RidgeFit};
use crate::warning::Warning;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// `1 − α` quantile of `|N(B, 1)|`.
///
/// Solves `Φ(B − c) + Φ(−B − c) = α` by bisection; the tail form keeps full
/// relative accuracy for large `B`.
pub fn cv_folded_normal(b: f64, alpha: f64) -> f64 {
    assert!(b >= 0.0 || b.is_nan(), "bias ratio must be nonnegative");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    if b.is_infinite() {
        return f64::INFINITY;
    }
    let tail = |c: f64| norm_cdf(b - c) + norm_cdf(-b - c);
    let mut lo = b.max(0.0) - 1.0;
    lo = lo.max(0.0);
    let mut hi = b + 10.0;
    while tail(hi) > alpha {
        hi = 2.0 * hi + 1.0;
    }
    while tail(lo) < alpha && lo > 0.0 {
        lo = (lo - 1.0).max(0.0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided normal quantile `z_{1−α/2}`.
pub fn z_two_sided(alpha: f64) -> f64 {
    cv_folded_normal(0.0, alpha)
}

/// Half-length `sd·cv_α(maxbias/sd)`; equals `maxbias` when `sd = 0`.
pub fn flci_half_length(maxbias: f64, sd: f64, alpha: f64) -> f64 {
    if sd > 0.0 {
        sd * cv_folded_normal(maxbias / sd, alpha)
    } else {
        maxbias
    }
}

/// Settings of the penalty search.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSearch {
    pub grid_points: usize,
    pub lo: f64,
    pub hi: f64,
    /// Multiplies `[lo, hi]`; defaults to [`ridge::lambda_scale`].
    pub scale: Option<f64>,
    /// Width in `ln λ` at which golden-section refinement stops.
    pub tol: f64,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        LambdaSearch { grid_points: 40, lo: 1e-8, hi: 1e12, scale: None, tol: 1e-7 }
    }
}

impl LambdaSearch {
    pub fn grid(&self, dm: &DesignMatrices) -> Vec<f64> {
        let s = self.scale.unwrap_or_else(|| ridge::lambda_scale(dm));
        let (a, b) = ((self.lo * s).ln(), (self.hi * s).ln());
        let m = self.grid_points.max(2);
        (0..m).map(|i| (a + (b - a) * i as f64 / (m - 1) as f64).exp()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LambdaChoice {
    pub lambda: Lambda,
    pub fit: RidgeFit,
    pub half_length: f64,
    pub maxbias: f64,
    /// `σ‖a‖` at the chosen penalty.
    pub sd: f64,
    /// Objective on the coarse grid; `+∞` where the fit failed.
    pub grid: Vec<(f64, f64)>,
}

struct Eval {
    fit: RidgeFit,
    maxbias: f64,
    sd: f64,
    half: f64,
}

fn evaluate(dm: &DesignMatrices, lambda: Lambda, c: f64, sigma: f64, alpha: f64) -> Option<Eval> {
    let fit = ridge::fit_at(dm, lambda).ok()?;
    let maxbias = bias::maxbias_ridge(&fit, dm, c).ok()?;
    let sd = sigma * fit.weight_norm_sq().sqrt();
    let half = flci_half_length(maxbias, sd, alpha);
    half.is_finite().then_some(Eval { fit, maxbias, sd, half })
}

/// Minimizes the FLCI half-length `σ‖a_λ‖·cv_α(maxbias_λ/(σ‖a_λ‖))` over the
/// frontier: coarse log grid, golden-section refinement around the best grid
/// point, and the two endpoints (short regression and the `λ → 0` limit).
pub fn optimize_lambda(
    dm: &DesignMatrices,
    c: f64,
    sigma: f64,
    alpha: f64,
    search: &LambdaSearch,
) -> Result<LambdaChoice> {
    bias::HeterogeneityBound::new(c)?;
    check_alpha(alpha)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::ObjectiveNonFinite(format!("sigma must be positive, got {sigma}")));
    }
    if c == 0.0 {
        let e = evaluate(dm, Lambda::Infinite, c, sigma, alpha).ok_or(Error::NoResidualTreatment)?;
        return Ok(LambdaChoice {
            lambda: Lambda::Infinite,
            fit: e.fit,
            half_length: e.half,
            maxbias: e.maxbias,
            sd: e.sd,
            grid: Vec::new(),
        });
    }
    let grid = search.grid(dm);
    let evals: Vec<Option<Eval>> = grid
        .par_iter()
        .map(|&l| evaluate(dm, Lambda::Finite(l), c, sigma, alpha))
        .collect();
    let grid_obj: Vec<(f64, f64)> = grid
        .iter()
        .zip(&evals)
        .map(|(&l, e)| (l, e.as_ref().map_or(f64::INFINITY, |e| e.half)))
        .collect();

    let mut best: Option<Eval> = None;
    let consider = |cand: Option<Eval>, best: &mut Option<Eval>| {
        if let Some(e) = cand {
            if best.as_ref().is_none_or(|b| e.half < b.half) {
                *best = Some(e);
            }
        }
    };

    let best_idx = grid_obj
        .iter()
        .enumerate()
        .filter(|(_, (_, h))| h.is_finite())
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i);
    for e in evals {
        consider(e, &mut best);
    }
    if let Some(i) = best_idx {
        let a = grid[i.saturating_sub(1)].ln();
        let b = grid[(i + 1).min(grid.len() - 1)].ln();
        let f = |t: f64| evaluate(dm, Lambda::Finite(t.exp()), c, sigma, alpha);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut lo, mut hi) = (a, b);
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let obj = |e: &Option<Eval>| e.as_ref().map_or(f64::INFINITY, |e| e.half);
        let mut e1 = f(x1);
        let mut e2 = f(x2);
        for _ in 0..200 {
            if hi - lo <= search.tol {
                break;
            }
            if obj(&e1) <= obj(&e2) {
                hi = x2;
                x2 = x1;
                consider(e2.take(), &mut best);
                e2 = e1.take();
                x1 = hi - g * (hi - lo);
                e1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                consider(e1.take(), &mut best);
                e1 = e2.take();
                x2 = lo + g * (hi - lo);
                e2 = f(x2);
            }
        }
        consider(e1, &mut best);
        consider(e2, &mut best);
    }
    consider(evaluate(dm, Lambda::Infinite, c, sigma, alpha), &mut best);
    consider(evaluate(dm, Lambda::Finite(0.0), c, sigma, alpha), &mut best);

    let e = best.ok_or_else(|| {
        Error::ObjectiveNonFinite(format!(
            "no finite half-length on {} grid points in [{:e}, {:e}] or at the endpoints",
            grid.len(),
            grid[0],
            grid[grid.len() - 1]
        ))
    })?;
    Ok(LambdaChoice {
        lambda: e.fit.lambda,
        fit: e.fit,
        half_length: e.half,
        maxbias: e.maxbias,
        sd: e.sd,
        grid: grid_obj,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialMode {
    /// OLS on the long regression.
    Long,
    /// Generalized ridge with a 10-fold cross-validated penalty.
    CvRidge,
    /// Long regression when feasible, otherwise cross-validated ridge.
    Auto,
}

impl fmt::Display for InitialMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitialMode::Long => "long",
            InitialMode::CvRidge => "cv_ridge",
            InitialMode::Auto => "auto",
        })
    }
}

impl FromStr for InitialMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long" => Ok(InitialMode::Long),
            "cv_ridge" | "cv-ridge" => Ok(InitialMode::CvRidge),
            "auto" => Ok(InitialMode::Auto),
            other => Err(Error::Config(format!("unknown initial estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InitialFit {
    /// Coefficients on `[D, X, D∘Xt]`.
    pub theta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub sigma_hat: f64,
    /// Mode actually used (never `Auto`).
    pub mode: InitialMode,
    pub cv_lambda: Option<f64>,
    pub warnings: Vec<Warning>,
}

pub const CV_FOLDS: usize = 10;

fn penalized_solve(gram: &DMatrix<f64>, pen: &DMatrix<f64>, lambda: f64, rhs: &DVector<f64>) -> DVector<f64> {
    let m = gram + pen * lambda;
    // Equilibrate before the eigen-decomposition so rank decisions are unit-free.
    let s: Vec<f64> = (0..m.nrows()).map(|i| if m[(i, i)] > 0.0 { m[(i, i)].sqrt() } else { 1.0 }).collect();
    let ms = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / (s[i] * s[j]));
    let f = SymPinv::new(&ms, PINV_REL_TOL);
    let rs = DVector::from_fn(rhs.len(), |i, _| rhs[i] / s[i]);
    let z = &f.pinv * rs;
    DVector::from_fn(z.len(), |i, _| z[i] / s[i])
}

/// Fits the outcome model used for residuals and `σ̂² = mean(ε̂²)`.
pub fn initial_estimator(dm: &DesignMatrices, y: &DVector<f64>, mode: InitialMode) -> Result<InitialFit> {
    if y.len() != dm.n() {
        return Err(Error::InvalidData("outcome length differs from design".into()));
    }
    let w = dm.long_matrix();
    let finish = |theta: DVector<f64>, mode, cv_lambda, warnings| {
        let residuals = y - &w * &theta;
        let sigma_hat = (residuals.norm_squared() / y.len() as f64).sqrt();
        InitialFit { theta, residuals, sigma_hat, mode, cv_lambda, warnings }
    };
    match mode {
        InitialMode::Long => {
            let proj = Projector::new(&w);
            if !proj.is_full_rank() {
                return Err(Error::LongInfeasible);
            }
            Ok(finish(proj.coefficients(y), InitialMode::Long, None, Vec::new()))
        }
        InitialMode::Auto => match initial_estimator(dm, y, InitialMode::Long) {
            Err(Error::LongInfeasible) => {
                let mut fit = initial_estimator(dm, y, InitialMode::CvRidge)?;
                fit.warnings.push(Warning::InitialFallback);
                Ok(fit)
            }
            other => other,
        },
        InitialMode::CvRidge => {
            let n = dm.n();
            let pen = dm.long_penalty();
            let scale = {
                let num: f64 = dm.dxt.iter().map(|v| v * v).sum();
                let s = num / dm.vx.trace();
                if s.is_finite() && s > 0.0 { s } else { 1.0 }
            };
            let lambdas: Vec<f64> = (0..25).map(|i| scale * 10f64.powf(-6.0 + 0.5 * i as f64)).collect();
            let folds = CV_FOLDS.min(n);
            let fold_data: Vec<(DMatrix<f64>, DVector<f64>, Vec<usize>)> = (0..folds)
                .map(|f| {
                    let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
                    let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
                    let wt = w.select_rows(&train);
                    let yt = DVector::from_fn(train.len(), |i, _| y[train[i]]);
                    (wt.tr_mul(&wt), wt.tr_mul(&yt), test)
                })
                .collect();
            let cv_err: Vec<f64> = lambdas
                .par_iter()
                .map(|&l| {
                    let mut sse = 0.0;
                    for (gram, rhs, test) in &fold_data {
                        let theta = penalized_solve(gram, &pen, l, rhs);
                        for &i in test {
                            let e = y[i] - w.row(i).dot(&theta.transpose());
                            sse += e * e;
                        }
                    }
                    sse
                })
                .collect();
            let best = cv_err
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let lam = lambdas[best];
            let theta = penalized_solve(&w.tr_mul(&w), &pen, lam, &w.tr_mul(y));
            Ok(finish(theta, InitialMode::CvRidge, Some(lam), Vec::new()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeKind {
    Homoskedastic,
    Robust,
    Cluster,
}

impl fmt::Display for SeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeKind::Homoskedastic => "homo",
            SeKind::Robust => "robust",
            SeKind::Cluster => "cluster",
        })
    }
}

impl FromStr for SeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homo" | "homoskedastic" => Ok(SeKind::Homoskedastic),
            "robust" => Ok(SeKind::Robust),
            "cluster" => Ok(SeKind::Cluster),
            other => Err(Error::Config(format!("unknown standard error kind `{other}`"))),
        }
    }
}

/// Variance of `a'Y`: `σ²‖a‖²`, `Σ a_i²ε̂_i²`, or `Σ_g (Σ_{i∈g} a_iε̂_i)²`.
pub fn variance_robust(
    a: &DVector<f64>,
    residuals: &DVector<f64>,
    kind: SeKind,
    sigma: f64,
    clusters: Option<&[i64]>,
) -> Result<f64> {
    match kind {
        SeKind::Homoskedastic => Ok(sigma * sigma * a.norm_squared()),
        SeKind::Robust => Ok(a.iter().zip(residuals.iter()).map(|(a, e)| (a * e).powi(2)).sum()),
        SeKind::Cluster => {
            let ids = clusters.ok_or_else(|| Error::Config("cluster standard errors need a cluster column".into()))?;
            let mut sums: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
            for i in 0..a.len() {
                *sums.entry(ids[i]).or_default() += a[i] * residuals[i];
            }
            if sums.len() < 2 {
                return Err(Error::SingleCluster);
            }
            Ok(sums.values().map(|s| s * s).sum())
        }
    }
}

/// `max_i a_i² / Σ a_j²`.
pub fn lindeberg_weight(a: &DVector<f64>) -> f64 {
    let total = a.norm_squared();
    a.iter().map(|v| v * v).fold(0.0, f64::max) / total
}

#[derive(Debug, Clone)]
pub struct CiConfig {
    pub c: f64,
    pub alpha: f64,
    pub se_kind: SeKind,
    pub initial: InitialMode,
    pub search: LambdaSearch,
    pub lindeberg_threshold: f64,
}

impl Default for CiConfig {
    fn default() -> Self {
        CiConfig {
            c: 0.0,
            alpha: 0.05,
            se_kind: SeKind::Robust,
            initial: InitialMode::Auto,
            search: LambdaSearch::default(),
            lindeberg_threshold: 0.05,
        }
    }
}

impl CiConfig {
    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_se(mut self, se: SeKind) -> Self {
        self.se_kind = se;
        self
    }
}

#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub estimand: Estimand,
    pub n: usize,
    pub c: f64,
    pub alpha: f64,
    pub beta_hat: f64,
    pub lambda_star: Lambda,
    pub half_length: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub maxbias: f64,
    pub sd: f64,
    pub se_kind: SeKind,
    pub sigma_hat: f64,
    pub initial_mode: InitialMode,
    pub lindeberg: f64,
    pub ridge_condition: f64,
    pub controls_rank: usize,
    pub vx_rank: usize,
    /// Rows whose fitted propensity is 0 or 1.
    pub no_overlap_rows: usize,
    pub weights: DVector<f64>,
    pub warnings: Vec<Warning>,
}

impl EstimateReport {
    /// Flat record in a fixed field order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("estimand", self.estimand.to_string()),
            ("n", self.n.to_string()),
            ("C", self.c.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta_hat", self.beta_hat.to_string()),
            ("ci_lo", self.ci_lo.to_string()),
            ("ci_hi", self.ci_hi.to_string()),
            ("half_length", self.half_length.to_string()),
            ("maxbias", self.maxbias.to_string()),
            ("sd", self.sd.to_string()),
            ("lambda_star", self.lambda_star.to_string()),
            ("se_kind", self.se_kind.to_string()),
            ("sigma_hat", self.sigma_hat.to_string()),
            ("initial", self.initial_mode.to_string()),
            ("lindeberg", self.lindeberg.to_string()),
            ("ridge_condition", self.ridge_condition.to_string()),
            ("controls_rank", self.controls_rank.to_string()),
            ("vx_rank", self.vx_rank.to_string()),
            ("no_overlap_rows", self.no_overlap_rows.to_string()),
        ]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let f = self.fields();
        w.write_record(f.iter().map(|(k, _)| *k))?;
        w.write_record(f.iter().map(|(_, v)| v.as_str()))?;
        w.flush()?;
        Ok(())
    }

    pub fn write_pretty<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, v) in self.fields() {
            writeln!(out, "{k:>16}: {v}")?;
        }
        for w in &self.warnings {
            writeln!(out, "{:>16}: {w}", "warning")?;
        }
        Ok(())
    }
}

/// Rows whose linear-probability propensity is numerically 0 or 1.
pub fn no_overlap_rows(dm: &DesignMatrices) -> usize {
    propensity_fit(dm).iter().filter(|p| *p * (1.0 - *p) <= 1e-10).count()
}

/// Full pipeline: initial estimator, optimal `λ` with `σ̂`, variance at `λ*`,
/// and the bias-aware interval.
pub fn feasible_ci(dm: &DesignMatrices, y: &DVector<f64>, cfg: &CiConfig) -> Result<EstimateReport> {
    let init = initial_estimator(dm, y, cfg.initial)?;
    feasible_ci_with(dm, y, cfg, &init)
}

/// As [`feasible_ci`] with a precomputed initial fit.
pub fn feasible_ci_with(
    dm: &DesignMatrices,
    y: &DVector<f64>,
    cfg: &CiConfig,
    init: &InitialFit,
) -> Result<EstimateReport> {
    check_alpha(cfg.alpha)?;
    let choice = optimize_lambda(dm, cfg.c, init.sigma_hat, cfg.alpha, &cfg.search)?;
    let a = &choice.fit.weights;
    let v = variance_robust(a, &init.residuals, cfg.se_kind, init.sigma_hat, dm.cluster_id.as_deref())?;
    let sd = v.sqrt();
    let maxbias = choice.maxbias;
    let half = flci_half_length(maxbias, sd, cfg.alpha);
    let beta_hat = choice.fit.beta_hat(y);
    let lind = lindeberg_weight(a);
    let mut warnings = dm.warnings.clone();
    warnings.extend(init.warnings.iter().cloned());
    if lind > cfg.lindeberg_threshold {
        warnings.push(Warning::LindebergWeight { value: lind, threshold: cfg.lindeberg_threshold });
    }
    if maxbias.is_infinite() {
        warnings.push(Warning::HeterogeneityUnidentified);
    }
    let ridge_condition = match choice.lambda {
        Lambda::Finite(l) if l > 0.0 => ridge::ridge_condition(dm, l),
        _ => f64::NAN,
    };
    Ok(EstimateReport {
        estimand: dm.estimand,
        n: dm.n(),
        c: cfg.c,
        alpha: cfg.alpha,
        beta_hat,
        lambda_star: choice.lambda,
        half_length: half,
        ci_lo: beta_hat - half,
        ci_hi: beta_hat + half,
        maxbias,
        sd,
        se_kind: cfg.se_kind,
        sigma_hat: init.sigma_hat,
        initial_mode: init.mode,
        lindeberg: lind,
        ridge_condition,
        controls_rank: dm.x_projector().rank(),
        vx_rank: dm.vx_pinv().rank,
        no_overlap_rows: no_overlap_rows(dm),
        weights: a.clone(),
        warnings,
    })
}
