use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure classes surfaced by the library.
///
/// The CLI maps these onto process exit codes via [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("residual or Jacobian evaluation produced a non-finite value: {0}")]
    EvaluationFailure(String),

    #[error("infeasible bounds at coordinate {index}: lower {lower} > upper {upper}")]
    InfeasibleBounds { index: usize, lower: f64, upper: f64 },

    #[error("prior variance at coordinate {index} must be strictly positive, got {value}")]
    NonPositivePrior { index: usize, value: f64 },

    #[error("sensitivity design has {rows} rows; at least {required} are needed")]
    DegenerateDesign { rows: usize, required: usize },

    #[error("information matrix is singular (numerical rank {rank} < {dim})")]
    SingularInformation { rank: usize, dim: usize },

    #[error("dataset current is not constant (sample {index}: {value} A vs {reference} A)")]
    NonConstantCurrent {
        index: usize,
        value: f64,
        reference: f64,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: missing header column `{column}`")]
    MissingHeader { path: PathBuf, column: String },

    #[error("time is not strictly increasing at row {row} (t = {t})")]
    NonMonotoneTime { row: usize, t: f64 },

    #[error("{failed} of {total} Monte Carlo runs failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used for exit codes and error records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Parse,
    Numerical,
    Config,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Parse => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Config => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Parse => "parse",
            ErrorClass::Numerical => "numerical",
            ErrorClass::Config => "config",
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. }
            | Error::MissingHeader { .. }
            | Error::NonMonotoneTime { .. }
            | Error::Json(_) => ErrorClass::Parse,
            Error::EvaluationFailure(_)
            | Error::DegenerateDesign { .. }
            | Error::SingularInformation { .. }
            | Error::TooManyFailures { .. } => ErrorClass::Numerical,
            Error::InfeasibleBounds { .. }
            | Error::NonPositivePrior { .. }
            | Error::NonConstantCurrent { .. }
            | Error::EmptyDataset
            | Error::InvalidParameter(_)
            | Error::Config(_)
            | Error::Io { .. } => ErrorClass::Config,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
