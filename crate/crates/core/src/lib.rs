//! Bias-aware estimation of average treatment effects under limited overlap.
//!
//! The estimator is a generalized ridge regression of the outcome on the
//! treatment, the controls and treatment-by-covariate interactions, with
//! the interactions penalized in the metric of the covariate second-moment
//! matrix. Its penalty is chosen to minimize the length of a confidence
//! interval that remains valid when the standard deviation of the
//! conditional treatment effects is at most `C`.
//!
//! Typical use:
//!
//! ```no_run
//! use regulate::dataset::{load_csv, saturate_discrete, Schema};
//! use regulate::design::{build_design, Estimand};
//! use regulate::inference::{feasible_ci, CiConfig};
//!
//! let schema = Schema::new("y", "d", &["g"]).with_discrete(&["g"]);
//! let ds = saturate_discrete(&load_csv("data.csv", &schema)?)?;
//! let dm = build_design(&ds, Estimand::Ate)?;
//! let report = feasible_ci(&dm, &ds.outcome, &CiConfig::default().with_c(0.5))?;
//! println!("{} [{}, {}]", report.beta_hat, report.ci_lo, report.ci_hi);
//! # Ok::<(), regulate::Error>(())
//! ```

pub mod baselines;
pub mod bias;
pub mod cli;
pub mod dataset;
pub mod design;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod ridge;
pub mod simlab;
pub mod vcate;
pub mod warning;

pub use error::{Error, ErrorKind, Result};
pub use warning::Warning;
