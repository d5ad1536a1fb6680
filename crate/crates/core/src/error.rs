use std::fmt;

use thiserror::Error;

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty file: no data rows")]
    EmptyInput,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-binary treatment at row {row}: value `{value}`")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("non-finite value at row {row}, column `{column}`")]
    NonFinite { row: usize, column: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("saturation exceeds degrees of freedom: {cells} cells for n = {n}")]
    SaturationExceedsDof { cells: usize, n: usize },

    #[error("not staggered adoption: treatment switches off for unit {unit}")]
    NotStaggered { unit: i64 },

    #[error("ridge system singular; increase lambda or drop collinear columns")]
    RidgeSingular,

    #[error("degenerate instrument: no residual treatment variation")]
    DegenerateInstrument,

    #[error("no residual treatment variation: treatment lies in the span of the controls")]
    NoResidualTreatment,

    #[error("no overlap anywhere; limit undefined")]
    NoOverlap,

    #[error("design is not saturated: {0}")]
    NotSaturated(String),

    #[error("weights not unbiased in (beta, gamma); general formula inapplicable")]
    WeightsNotUnbiased,

    #[error("long regression infeasible (no overlap); fall back to the cross-validated ridge initial estimator or the overlap subsample")]
    LongInfeasible,

    #[error("trimming removed {0}")]
    TrimmedSample(String),

    #[error("need >= 2 clusters")]
    SingleCluster,

    #[error("observation at row {row} has leverage 1; leave-one-out variance undefined")]
    SelfLeveraged { row: usize },

    #[error("objective non-finite on the whole lambda range: {0}")]
    ObjectiveNonFinite(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Io(_)
            | Error::Csv(_)
            | Error::EmptyInput
            | Error::MissingColumn(_)
            | Error::NonBinaryTreatment { .. }
            | Error::NonFinite { .. }
            | Error::InvalidData(_)
            | Error::SaturationExceedsDof { .. }
            | Error::NotStaggered { .. }
            | Error::NotSaturated(_)
            | Error::TrimmedSample(_)
            | Error::SingleCluster => ErrorKind::Data,
            Error::RidgeSingular
            | Error::DegenerateInstrument
            | Error::NoResidualTreatment
            | Error::NoOverlap
            | Error::WeightsNotUnbiased
            | Error::LongInfeasible
            | Error::SelfLeveraged { .. }
            | Error::ObjectiveNonFinite(_) => ErrorKind::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
