//! C ABI for the regulate estimator.
//!
//! Objects cross the boundary as opaque handles created by `reg_*_new` or
//! `reg_*_build` and released with the matching `reg_*_free`. Every fallible
//! call returns a [`RegStatus`]; on failure the message is available from
//! [`reg_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::{DMatrix, DVector};
use regulate::bias::maxbias_general;
use regulate::dataset::{saturate, CovariateKind, Dataset};
use regulate::design::{build_design, DesignMatrices, Estimand};
use regulate::inference::{cv_folded_normal, feasible_ci, CiConfig, EstimateReport, SeKind};
use regulate::ridge::Lambda;
use regulate::ErrorKind;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegEstimand {
    Ate = 0,
    Att = 1,
    Atu = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegSeKind {
    Homoskedastic = 0,
    Robust = 1,
    Cluster = 2,
}

/// Inputs to [`reg_estimate`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RegOptions {
    /// Bound on the standard deviation of conditional effects.
    pub c: f64,
    pub alpha: f64,
    pub se_kind: RegSeKind,
}

/// Scalar summary of an estimate. `lambda_star` is `INFINITY` for the
/// short regression.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RegSummary {
    pub n: usize,
    pub beta_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub half_length: f64,
    pub maxbias: f64,
    pub sd: f64,
    pub lambda_star: f64,
    pub sigma_hat: f64,
    pub lindeberg: f64,
    pub warnings: usize,
}

pub struct RegDataset {
    inner: Dataset,
}

pub struct RegDesign {
    dm: DesignMatrices,
    y: DVector<f64>,
}

pub struct RegReport {
    inner: EstimateReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RegStatus, String);

impl From<regulate::Error> for Failure {
    fn from(e: regulate::Error) -> Self {
        let status = match e.kind() {
            ErrorKind::Config => RegStatus::Config,
            ErrorKind::Data => RegStatus::Data,
            ErrorKind::Numerical => RegStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RegStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            RegStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RegStatus::NullPointer, format!("null pointer: {what}"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn array<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn reg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn reg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Critical value `cv_alpha(b)`: the `1 − alpha` quantile of `|N(b, 1)|`.
///
/// # Safety
/// `out` must point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn reg_cv(b: f64, alpha: f64, out: *mut f64) -> RegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(b >= 0.0) || !(alpha > 0.0 && alpha < 1.0) {
            return Err(Failure(RegStatus::Config, format!("need b >= 0 and alpha in (0, 1), got b={b}, alpha={alpha}")));
        }
        *out = cv_folded_normal(b, alpha);
        Ok(())
    })
}

/// Builds a dataset from `n` outcomes, treatments and an `n × p` covariate
/// matrix stored column-major. `names` may be NULL, in which case the
/// covariates are named `x0`, `x1`, ...
///
/// # Safety
/// `y` and `d` must point to `n` doubles, `x` to `n * p` doubles, `names` to
/// `p` NUL-terminated strings when non-NULL, and `out` to a writable handle.
#[no_mangle]
pub unsafe extern "C" fn reg_dataset_new(
    y: *const f64,
    d: *const f64,
    x: *const f64,
    n: usize,
    p: usize,
    names: *const *const c_char,
    out: *mut *mut RegDataset,
) -> RegStatus {
    guard(|| {
        let y = array(y, n, "y")?;
        let d = array(d, n, "d")?;
        let x = array(x, n * p, "x")?;
        let names = if names.is_null() {
            (0..p).map(|j| format!("x{j}")).collect()
        } else {
            (0..p)
                .map(|j| {
                    let s = *names.add(j);
                    if s.is_null() {
                        return Err(null("names[j]"));
                    }
                    Ok(CStr::from_ptr(s).to_string_lossy().into_owned())
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        let ds = Dataset::new(y.to_vec(), d.to_vec(), DMatrix::from_column_slice(n, p, x), names)?;
        store(out, RegDataset { inner: ds })
    })
}

/// Attaches cluster identifiers used by cluster-robust standard errors.
///
/// # Safety
/// `ds` must be a live dataset handle and `ids` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn reg_dataset_set_clusters(ds: *mut RegDataset, ids: *const i64, n: usize) -> RegStatus {
    guard(|| {
        let h = ds.as_mut().ok_or_else(|| null("dataset"))?;
        if ids.is_null() && n > 0 {
            return Err(null("ids"));
        }
        let v = if n == 0 { Vec::new() } else { slice::from_raw_parts(ids, n).to_vec() };
        h.inner = h.inner.clone().with_clusters(v)?;
        Ok(())
    })
}

/// Replaces the listed covariate columns, treated as discrete, by the
/// indicators of their joint cells. The input handle is left unchanged.
///
/// # Safety
/// `ds` must be a live dataset handle, `columns` must point to `ncols`
/// indices and `out` to a writable handle.
#[no_mangle]
pub unsafe extern "C" fn reg_dataset_saturate(
    ds: *const RegDataset,
    columns: *const usize,
    ncols: usize,
    out: *mut *mut RegDataset,
) -> RegStatus {
    guard(|| {
        let h = borrow(ds, "dataset")?;
        if columns.is_null() && ncols > 0 {
            return Err(null("columns"));
        }
        let cols = if ncols == 0 { &[][..] } else { slice::from_raw_parts(columns, ncols) };
        let p = h.inner.covariates.ncols();
        let mut kinds = h.inner.covariate_kinds.clone();
        let mut names = Vec::with_capacity(ncols);
        for &j in cols {
            if j >= p {
                return Err(Failure(RegStatus::Config, format!("column {j} out of range for {p} covariates")));
            }
            kinds[j] = CovariateKind::Discrete;
            names.push(h.inner.covariate_names[j].as_str());
        }
        let marked = h.inner.clone().with_kinds(kinds)?;
        store(out, RegDataset { inner: saturate(&marked, &names)? })
    })
}

/// Number of rows, or 0 for a NULL handle.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn reg_dataset_n(ds: *const RegDataset) -> usize {
    ds.as_ref().map_or(0, |h| h.inner.outcome.len())
}

/// Number of covariate columns, or 0 for a NULL handle.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn reg_dataset_p(ds: *const RegDataset) -> usize {
    ds.as_ref().map_or(0, |h| h.inner.covariates.ncols())
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn reg_dataset_free(ds: *mut RegDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Builds the design matrices for `estimand`. The design keeps its own copy
/// of the outcome, so the dataset may be freed afterwards.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` a writable handle.
#[no_mangle]
pub unsafe extern "C" fn reg_design_build(
    ds: *const RegDataset,
    estimand: RegEstimand,
    out: *mut *mut RegDesign,
) -> RegStatus {
    guard(|| {
        let h = borrow(ds, "dataset")?;
        let est = match estimand {
            RegEstimand::Ate => Estimand::Ate,
            RegEstimand::Att => Estimand::Att,
            RegEstimand::Atu => Estimand::Atu,
        };
        let dm = build_design(&h.inner, est)?;
        store(out, RegDesign { dm, y: h.inner.outcome.clone() })
    })
}

/// Number of interaction columns `k`, or 0 for a NULL handle.
///
/// # Safety
/// `design` must be NULL or a live design handle.
#[no_mangle]
pub unsafe extern "C" fn reg_design_k(design: *const RegDesign) -> usize {
    design.as_ref().map_or(0, |h| h.dm.k())
}

/// # Safety
/// `design` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn reg_design_free(design: *mut RegDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Worst-case bias of the linear estimator `Σ aᵢYᵢ` over effects whose
/// standard deviation is at most `c`.
///
/// # Safety
/// `design` must be a live design handle, `weights` must point to `n`
/// doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn reg_maxbias(
    design: *const RegDesign,
    weights: *const f64,
    n: usize,
    c: f64,
    out: *mut f64,
) -> RegStatus {
    guard(|| {
        let h = borrow(design, "design")?;
        if n != h.dm.n() {
            return Err(Failure(RegStatus::Config, format!("weights have length {n} but n = {}", h.dm.n())));
        }
        let a = DVector::from_column_slice(array(weights, n, "weights")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = maxbias_general(&a, &h.dm, c)?;
        Ok(())
    })
}

/// Point estimate and bias-aware confidence interval.
///
/// # Safety
/// `design` must be a live design handle, `opts` must point to a valid
/// options struct and `out` to a writable handle.
#[no_mangle]
pub unsafe extern "C" fn reg_estimate(
    design: *const RegDesign,
    opts: *const RegOptions,
    out: *mut *mut RegReport,
) -> RegStatus {
    guard(|| {
        let h = borrow(design, "design")?;
        let o = borrow(opts, "options")?;
        let se = match o.se_kind {
            RegSeKind::Homoskedastic => SeKind::Homoskedastic,
            RegSeKind::Robust => SeKind::Robust,
            RegSeKind::Cluster => SeKind::Cluster,
        };
        if !(o.alpha > 0.0 && o.alpha < 1.0) {
            return Err(Failure(RegStatus::Config, format!("alpha must lie in (0, 1), got {}", o.alpha)));
        }
        regulate::bias::HeterogeneityBound::new(o.c)?;
        let cfg = CiConfig { alpha: o.alpha, ..CiConfig::default() }.with_c(o.c).with_se(se);
        store(out, RegReport { inner: feasible_ci(&h.dm, &h.y, &cfg)? })
    })
}

/// # Safety
/// `report` must be a live report handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn reg_report_summary(report: *const RegReport, out: *mut RegSummary) -> RegStatus {
    guard(|| {
        let r = &borrow(report, "report")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = RegSummary {
            n: r.n,
            beta_hat: r.beta_hat,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            half_length: r.half_length,
            maxbias: r.maxbias,
            sd: r.sd,
            lambda_star: match r.lambda_star {
                Lambda::Finite(l) => l,
                Lambda::Infinite => f64::INFINITY,
            },
            sigma_hat: r.sigma_hat,
            lindeberg: r.lindeberg,
            warnings: r.warnings.len(),
        };
        Ok(())
    })
}

/// Copies the estimator weights into `buf`, which must hold `len >= n`
/// doubles.
///
/// # Safety
/// `report` must be a live report handle and `buf` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn reg_report_weights(report: *const RegReport, buf: *mut f64, len: usize) -> RegStatus {
    guard(|| {
        let w = &borrow(report, "report")?.inner.weights;
        if len < w.len() {
            return Err(Failure(RegStatus::Config, format!("buffer holds {len} values, need {}", w.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        slice::from_raw_parts_mut(buf, w.len()).copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn reg_report_free(report: *mut RegReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
