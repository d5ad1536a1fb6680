use std::fmt;

/// Non-fatal conditions surfaced alongside results.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    DegenerateCovariate { column: String },
    VxRankDeficient { rank: usize, dim: usize },
    ControlsRankDeficient { rank: usize, dim: usize },
    AttNotIdentified { periods: Vec<i64> },
    LindebergWeight { value: f64, threshold: f64 },
    HeterogeneityUnidentified,
    OverlapSubsample { dropped_rows: usize },
    InitialFallback,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::DegenerateCovariate { column } => {
                write!(f, "degenerate covariate `{column}`: a single level, no indicators emitted")
            }
            Warning::VxRankDeficient { rank, dim } => {
                write!(f, "Vx rank-deficient (rank {rank} of {dim})")
            }
            Warning::ControlsRankDeficient { rank, dim } => {
                write!(f, "controls rank-deficient (rank {rank} of {dim}); using pseudo-inverse")
            }
            Warning::AttNotIdentified { periods } => write!(
                f,
                "ATT not point-identified; bound C required (no untreated comparison in periods {periods:?})"
            ),
            Warning::LindebergWeight { value, threshold } => write!(
                f,
                "maximal Lindeberg weight {value:.4} exceeds {threshold}; normal approximation may be poor"
            ),
            Warning::HeterogeneityUnidentified => {
                f.write_str("heterogeneity direction unidentified: weights load on the null space of Vx")
            }
            Warning::OverlapSubsample { dropped_rows } => write!(
                f,
                "long regression infeasible; using the overlap subsample ({dropped_rows} rows dropped)"
            ),
            Warning::InitialFallback => {
                f.write_str("long regression infeasible for the initial estimator; using cross-validated ridge")
            }
        }
    }
}
