//! Fixed-design Monte Carlo experiments.
//!
//! The design `(x_i, d_i)` is held fixed and only the errors are redrawn.
//! Replication `r` draws from a ChaCha8 stream keyed by `(master_seed, r)`,
//! so results do not depend on the number of threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;

use crate::baselines;
use crate::bias::{self, TrimRule};
use crate::dataset::{saturate, CovariateKind, Dataset};
use crate::design::{build_design, DesignMatrices, Estimand};
use crate::error::{Error, Result};
use crate::inference::{self, CiConfig, InitialMode, LambdaSearch, SeKind};
use crate::linalg::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimEstimator {
    Regulate,
    Short,
    ShortBc,
    Long,
    Trim,
}

impl SimEstimator {
    pub const ALL: [SimEstimator; 5] =
        [SimEstimator::Regulate, SimEstimator::Short, SimEstimator::ShortBc, SimEstimator::Long, SimEstimator::Trim];
}

impl fmt::Display for SimEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimEstimator::Regulate => "regulaTE",
            SimEstimator::Short => "short",
            SimEstimator::ShortBc => "short_bc",
            SimEstimator::Long => "long",
            SimEstimator::Trim => "trim",
        })
    }
}

#[derive(Debug, Clone)]
pub enum DesignSource {
    /// Cells of the given sizes; `round(p·size)` units of each are treated.
    Cells { sizes: Vec<usize>, propensities: Vec<f64> },
    Data(Box<Dataset>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeltaDirection {
    /// Direction maximizing the worst-case bias of an estimator's weights.
    WorstFor(SimEstimator),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TauProfile {
    PerCell(Vec<f64>),
    /// `τ_i = target + x̃_i'δ` with `δ'Vxδ = c0²`.
    Heterogeneity { target: f64, c0: f64, direction: DeltaDirection },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorLaw {
    Gaussian,
    /// Student t rescaled to unit variance.
    ScaledT { df: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// regulaTE and all intervals use the true `C₀` and `σ₀`.
    Oracle,
    /// regulaTE runs the feasible pipeline; standard errors are estimated.
    Feasible,
}

impl FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(SimMode::Oracle),
            "feasible" => Ok(SimMode::Feasible),
            other => Err(Error::Config(format!("unknown simulation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub source: DesignSource,
    pub tau: TauProfile,
    /// Coefficients on the controls `[1, X]`; zero when absent.
    pub gamma: Option<Vec<f64>>,
    pub sigma0: f64,
    pub error_law: ErrorLaw,
    pub estimand: Estimand,
    pub alpha: f64,
    pub mode: SimMode,
    pub trim: TrimRule,
}

impl DgpSpec {
    pub fn cells(sizes: Vec<usize>, propensities: Vec<f64>, tau: TauProfile) -> Self {
        DgpSpec {
            source: DesignSource::Cells { sizes, propensities },
            tau,
            gamma: None,
            sigma0: 1.0,
            error_law: ErrorLaw::Gaussian,
            estimand: Estimand::Ate,
            alpha: 0.05,
            mode: SimMode::Oracle,
            trim: TrimRule::default(),
        }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        match &self.source {
            DesignSource::Data(ds) => Ok((**ds).clone()),
            DesignSource::Cells { sizes, propensities } => {
                if sizes.len() != propensities.len() || sizes.is_empty() {
                    return Err(Error::Config("sizes and propensities must have equal, positive length".into()));
                }
                let mut d = Vec::new();
                let mut cell = Vec::new();
                for (c, (&s, &p)) in sizes.iter().zip(propensities).enumerate() {
                    if !(0.0..=1.0).contains(&p) || s == 0 {
                        return Err(Error::Config(format!("cell {c}: need size > 0 and propensity in [0, 1]")));
                    }
                    let t = (p * s as f64).round() as usize;
                    for i in 0..s {
                        d.push(if i < t { 1.0 } else { 0.0 });
                        cell.push(c as f64);
                    }
                }
                let n = d.len();
                let ds = Dataset::new(vec![0.0; n], d, DMatrix::from_column_slice(n, 1, &cell), vec!["cell".into()])?
                    .with_kinds(vec![CovariateKind::Discrete])?;
                saturate(&ds, &["cell"])
            }
        }
    }
}

/// Boundary point of the heterogeneity ellipsoid.
#[derive(Debug, Clone, Copy)]
pub enum DeltaTarget<'a> {
    /// KKT maximizer of the bias of these weights.
    Weights(&'a DVector<f64>),
    Direction(&'a DVector<f64>),
}

/// `δ` with `δ'Vxδ = C²` along the requested direction.
pub fn make_worstcase_delta(dm: &DesignMatrices, c: f64, target: DeltaTarget<'_>) -> Result<DVector<f64>> {
    bias::HeterogeneityBound::new(c)?;
    if c == 0.0 {
        return Ok(DVector::zeros(dm.k()));
    }
    let v = match target {
        DeltaTarget::Weights(a) => &dm.vx_pinv().pinv * dm.dxt.tr_mul(a),
        DeltaTarget::Direction(v) => {
            if v.len() != dm.k() {
                return Err(Error::Config(format!("direction has length {} but k = {}", v.len(), dm.k())));
            }
            v.clone()
        }
    };
    let s = v.dot(&(&dm.vx * &v));
    if !(s > 1e-300) || !s.is_finite() {
        return Err(Error::InvalidData("zero heterogeneity direction".into()));
    }
    Ok(v * (c / s.sqrt()))
}

#[derive(Debug, Clone)]
pub struct EstimatorSummary {
    pub estimator: SimEstimator,
    /// `Err` holds the reason an estimator is infeasible on the design.
    pub status: std::result::Result<(), String>,
    pub mean_estimate: f64,
    pub worst_case_bias: f64,
    pub actual_bias: f64,
    pub mean_se: f64,
    pub mc_sd: f64,
    pub mean_length: f64,
    pub length_ratio: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct McResult {
    pub reps: usize,
    pub master_seed: u64,
    pub n: usize,
    pub truth: f64,
    pub c0: f64,
    pub summaries: Vec<EstimatorSummary>,
}

impl McResult {
    pub fn get(&self, e: SimEstimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == e)
    }

    /// Metrics as rows, estimators as columns.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# reps={} seed={} n={} truth={} c0={}", self.reps, self.master_seed, self.n, self.truth, self.c0)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["metric".to_string()];
        header.extend(self.summaries.iter().map(|s| s.estimator.to_string()));
        w.write_record(&header)?;
        type Getter = fn(&EstimatorSummary) -> f64;
        let metrics: [(&str, Getter); 8] = [
            ("estimate_mean", |s| s.mean_estimate),
            ("worst_case_bias", |s| s.worst_case_bias),
            ("actual_bias", |s| s.actual_bias),
            ("std_error_mean", |s| s.mean_se),
            ("std_error_mc", |s| s.mc_sd),
            ("ci_length", |s| s.mean_length),
            ("ci_length_ratio", |s| s.length_ratio),
            ("coverage", |s| s.coverage),
        ];
        for (name, get) in metrics.iter() {
            let mut rec = vec![name.to_string()];
            for s in &self.summaries {
                rec.push(match s.status {
                    Ok(()) => get(s).to_string(),
                    Err(_) => "infeasible".into(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Estimator with weights fixed by the design.
struct FixedEstimator {
    weights: DVector<f64>,
    /// Oracle half-length given the known `σ₀`.
    oracle_half: f64,
    maxbias: f64,
    bias_corrected: bool,
}

#[derive(Clone, Copy, Default)]
struct Draw {
    estimate: f64,
    se: f64,
    half: f64,
    covered: bool,
}

fn draw_errors(law: ErrorLaw, n: usize, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    Ok(match law {
        ErrorLaw::Gaussian => DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng))),
        ErrorLaw::ScaledT { df } => {
            if !(df > 2.0) {
                return Err(Error::Config(format!("t errors need df > 2, got {df}")));
            }
            let t = StudentT::new(df).map_err(|e| Error::Config(e.to_string()))?;
            let s = ((df - 2.0) / df).sqrt();
            DVector::from_iterator(n, (0..n).map(|_| t.sample(rng) * s))
        }
    })
}

/// Runs `reps` replications of the DGP and summarizes each estimator.
pub fn simulate(spec: &DgpSpec, reps: usize, master_seed: u64, estimators: &[SimEstimator]) -> Result<McResult> {
    if reps < 1 {
        return Err(Error::Config("need at least one replication".into()));
    }
    if !(spec.sigma0 > 0.0) {
        return Err(Error::Config("sigma0 must be positive".into()));
    }
    let ds = spec.dataset()?;
    let dm = build_design(&ds, spec.estimand)?;
    let n = dm.n();
    let alpha = spec.alpha;
    let z = inference::z_two_sided(alpha);
    let pop = spec.estimand.population_weights(&dm.d);
    let pop_total = compensated_sum(pop.iter().copied());

    // Oracle regulaTE weights need C₀, which for per-cell τ comes from τ itself.
    let (tau, c0_hint) = match &spec.tau {
        TauProfile::PerCell(values) => {
            let cells = ds
                .cells
                .as_ref()
                .ok_or_else(|| Error::Config("per-cell effects need a cell design".into()))?;
            if values.len() != cells.count() {
                return Err(Error::Config(format!("tau has {} values for {} cells", values.len(), cells.count())));
            }
            (Some(DVector::from_fn(n, |i, _| values[cells.ids[i]])), None)
        }
        TauProfile::Heterogeneity { c0, .. } => (None, Some(*c0)),
    };
    let c0 = match (&tau, c0_hint) {
        (Some(t), _) => {
            let m = compensated_sum(t.iter().zip(&pop).map(|(t, w)| t * w)) / pop_total;
            (compensated_sum(t.iter().map(|t| (t - m).powi(2))) / n as f64).sqrt()
        }
        (None, Some(c)) => c,
        _ => unreachable!(),
    };

    let search = LambdaSearch::default();
    let fixed = |e: SimEstimator| -> Result<FixedEstimator> {
        let (weights, maxbias, half, bc) = match e {
            SimEstimator::Regulate => {
                let ch = inference::optimize_lambda(&dm, c0, spec.sigma0, alpha, &search)?;
                (ch.fit.weights, ch.maxbias, ch.half_length, true)
            }
            SimEstimator::Short | SimEstimator::ShortBc => {
                let f = baselines::short_ridge_fit(&dm)?;
                let mb = bias::maxbias_general(&f.weights, &dm, c0)?;
                let sd = spec.sigma0 * f.weights.norm();
                let bc = e == SimEstimator::ShortBc;
                let half = if bc { inference::flci_half_length(mb, sd, alpha) } else { z * sd };
                (f.weights, mb, half, bc)
            }
            SimEstimator::Long => {
                let a = baselines::long_weights(&dm)?;
                let mb = bias::maxbias_general(&a, &dm, c0)?;
                let h = z * spec.sigma0 * a.norm();
                (a, mb, h, false)
            }
            SimEstimator::Trim => {
                let a = baselines::trimmed_weights(&dm, &spec.trim)?.weights;
                let mb = bias::maxbias_general(&a, &dm, c0)?;
                let h = z * spec.sigma0 * a.norm();
                (a, mb, h, false)
            }
        };
        Ok(FixedEstimator { weights, oracle_half: half, maxbias, bias_corrected: bc })
    };
    let fixed_est: Vec<std::result::Result<FixedEstimator, String>> =
        estimators.iter().map(|&e| fixed(e).map_err(|err| err.to_string())).collect();

    let tau = match tau {
        Some(t) => t,
        None => {
            let TauProfile::Heterogeneity { target, c0, direction } = &spec.tau else { unreachable!() };
            let delta = match direction {
                DeltaDirection::Vector(v) => {
                    make_worstcase_delta(&dm, *c0, DeltaTarget::Direction(&DVector::from_column_slice(v)))?
                }
                DeltaDirection::WorstFor(e) => {
                    let fe = fixed(*e)?;
                    make_worstcase_delta(&dm, *c0, DeltaTarget::Weights(&fe.weights))?
                }
            };
            DVector::from_fn(n, |i, _| target + dm.xt.row(i).dot(&delta.transpose()))
        }
    };
    let truth = compensated_sum(tau.iter().zip(&pop).map(|(t, w)| t * w)) / pop_total;
    let gamma = match &spec.gamma {
        Some(g) if g.len() == dm.x.ncols() => DVector::from_column_slice(g),
        Some(g) => {
            return Err(Error::Config(format!("gamma has {} entries, controls have {}", g.len(), dm.x.ncols())))
        }
        None => DVector::zeros(dm.x.ncols()),
    };
    let mu = &dm.x * gamma + dm.d.component_mul(&tau);

    let feasible_cfg = CiConfig {
        c: c0,
        alpha,
        se_kind: SeKind::Robust,
        initial: InitialMode::Auto,
        search: search.clone(),
        lindeberg_threshold: 0.05,
    };

    let draws: Vec<Vec<Option<Draw>>> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Option<Draw>>> {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(rep as u64);
            let eps = draw_errors(spec.error_law, n, &mut rng)?;
            let y = &mu + eps * spec.sigma0;
            let init = match spec.mode {
                SimMode::Oracle => None,
                SimMode::Feasible => Some(inference::initial_estimator(&dm, &y, InitialMode::Auto)?),
            };
            let mut out = Vec::with_capacity(estimators.len());
            for (k, &e) in estimators.iter().enumerate() {
                let fe = match &fixed_est[k] {
                    Ok(f) => f,
                    Err(_) => {
                        out.push(None);
                        continue;
                    }
                };
                let draw = match (&init, e) {
                    (None, _) => {
                        let est = fe.weights.dot(&y);
                        Draw {
                            estimate: est,
                            se: spec.sigma0 * fe.weights.norm(),
                            half: fe.oracle_half,
                            covered: (est - truth).abs() <= fe.oracle_half,
                        }
                    }
                    (Some(init), SimEstimator::Regulate) => {
                        let rep = inference::feasible_ci_with(&dm, &y, &feasible_cfg, init)?;
                        Draw {
                            estimate: rep.beta_hat,
                            se: rep.sd,
                            half: rep.half_length,
                            covered: (rep.beta_hat - truth).abs() <= rep.half_length,
                        }
                    }
                    (Some(init), _) => {
                        let est = fe.weights.dot(&y);
                        let v = inference::variance_robust(&fe.weights, &init.residuals, SeKind::Robust, 0.0, None)?;
                        let se = v.sqrt();
                        let half = if fe.bias_corrected {
                            inference::flci_half_length(fe.maxbias, se, alpha)
                        } else {
                            z * se
                        };
                        Draw { estimate: est, se, half, covered: (est - truth).abs() <= half }
                    }
                };
                out.push(Some(draw));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut summaries = Vec::with_capacity(estimators.len());
    for (k, &e) in estimators.iter().enumerate() {
        let status = fixed_est[k].as_ref().map(|_| ()).map_err(|s| s.clone());
        let col: Vec<Draw> = draws.iter().filter_map(|d| d[k]).collect();
        let r = col.len().max(1) as f64;
        let mean_est = compensated_sum(col.iter().map(|d| d.estimate)) / r;
        let var = compensated_sum(col.iter().map(|d| (d.estimate - mean_est).powi(2))) / (r - 1.0).max(1.0);
        let (worst, actual) = match &fixed_est[k] {
            Ok(f) => (f.maxbias, f.weights.dot(&mu) - truth),
            Err(_) => (f64::NAN, f64::NAN),
        };
        summaries.push(EstimatorSummary {
            estimator: e,
            status,
            mean_estimate: mean_est,
            worst_case_bias: worst,
            actual_bias: actual,
            mean_se: compensated_sum(col.iter().map(|d| d.se)) / r,
            mc_sd: var.sqrt(),
            mean_length: compensated_sum(col.iter().map(|d| 2.0 * d.half)) / r,
            length_ratio: f64::NAN,
            coverage: col.iter().filter(|d| d.covered).count() as f64 / r,
        });
    }
    if let Some(reference) = summaries
        .iter()
        .find(|s| s.estimator == SimEstimator::Regulate && s.status.is_ok())
        .map(|s| s.mean_length)
    {
        for s in &mut summaries {
            s.length_ratio = s.mean_length / reference;
        }
    }
    Ok(McResult { reps, master_seed, n, truth, c0, summaries })
}

/// Simulation settings read from a `key=value` file.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub spec: DgpSpec,
    pub reps: usize,
    pub seed: u64,
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| Error::Config(format!("bad value `{s}` for `{key}`"))))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse::<T>().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

/// Parses a DGP description. Blank lines and `#` comments are ignored.
///
/// Keys: `cells`, `sizes`, `propensities`, `tau` or (`target`, `c0`,
/// `direction`), `gamma`, `sigma0`, `errors` (`gaussian` or `t`), `df`,
/// `estimand`, `alpha`, `mode`, `trim_c`, `reps`, `seed`.
pub fn parse_dgp_config(text: &str) -> Result<SimConfig> {
    let mut kv = std::collections::BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", ln + 1)))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let known = [
        "cells", "sizes", "propensities", "tau", "target", "c0", "direction", "gamma", "sigma0", "errors", "df",
        "estimand", "alpha", "mode", "trim_c", "reps", "seed",
    ];
    if let Some(k) = kv.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown key `{k}`")));
    }
    let get = |k: &str| kv.get(k).map(String::as_str);
    let propensities: Vec<f64> =
        parse_list("propensities", get("propensities").ok_or_else(|| Error::Config("missing `propensities`".into()))?)?;
    let m = propensities.len();
    if let Some(c) = get("cells") {
        if parse_one::<usize>("cells", c)? != m {
            return Err(Error::Config("`cells` disagrees with the number of propensities".into()));
        }
    }
    let sizes: Vec<usize> = match get("sizes") {
        Some(s) => {
            let v: Vec<usize> = parse_list("sizes", s)?;
            if v.len() == 1 {
                vec![v[0]; m]
            } else {
                v
            }
        }
        None => return Err(Error::Config("missing `sizes`".into())),
    };
    let tau = match (get("tau"), get("c0")) {
        (Some(t), None) => TauProfile::PerCell(parse_list("tau", t)?),
        (None, Some(c0)) => {
            let direction = match get("direction").unwrap_or("worst_regulate") {
                "worst_regulate" => DeltaDirection::WorstFor(SimEstimator::Regulate),
                "worst_short" => DeltaDirection::WorstFor(SimEstimator::Short),
                "worst_trim" => DeltaDirection::WorstFor(SimEstimator::Trim),
                other => match other.strip_prefix("vector:") {
                    Some(v) => DeltaDirection::Vector(parse_list("direction", v)?),
                    None => return Err(Error::Config(format!("unknown direction `{other}`"))),
                },
            };
            TauProfile::Heterogeneity {
                target: get("target").map(|v| parse_one("target", v)).transpose()?.unwrap_or(0.0),
                c0: parse_one("c0", c0)?,
                direction,
            }
        }
        _ => return Err(Error::Config("specify exactly one of `tau` or `c0`".into())),
    };
    let error_law = match get("errors").unwrap_or("gaussian") {
        "gaussian" => ErrorLaw::Gaussian,
        "t" => ErrorLaw::ScaledT { df: get("df").map(|v| parse_one("df", v)).transpose()?.unwrap_or(5.0) },
        other => return Err(Error::Config(format!("unknown error law `{other}`"))),
    };
    let spec = DgpSpec {
        source: DesignSource::Cells { sizes, propensities },
        tau,
        gamma: get("gamma").map(|g| parse_list("gamma", g)).transpose()?,
        sigma0: get("sigma0").map(|v| parse_one("sigma0", v)).transpose()?.unwrap_or(1.0),
        error_law,
        estimand: get("estimand").map(str::parse).transpose()?.unwrap_or(Estimand::Ate),
        alpha: get("alpha").map(|v| parse_one("alpha", v)).transpose()?.unwrap_or(0.05),
        mode: get("mode").map(str::parse).transpose()?.unwrap_or(SimMode::Oracle),
        trim: TrimRule::new(get("trim_c").map(|v| parse_one("trim_c", v)).transpose()?.unwrap_or(0.09))?,
    };
    Ok(SimConfig {
        spec,
        reps: get("reps").map(|v| parse_one("reps", v)).transpose()?.unwrap_or(1000),
        seed: get("seed").map(|v| parse_one("seed", v)).transpose()?.unwrap_or(20240101),
    })
}
