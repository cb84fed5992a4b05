use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is outside the allowed range [{min}, {max}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("feature `{0}` is constant on the training rows and cannot be standardized")]
    ConstantFeature(String),
    #[error("singular system in {what} (condition estimate {condition:.3e})")]
    Singular { what: String, condition: f64 },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("actual value is zero at row {row}, output {output}; MAPE is undefined")]
    ZeroActual { row: usize, output: usize },
    #[error("model has not been trained")]
    Untrained,
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("expected a {expected} model, found {found}")]
    FamilyMismatch { expected: String, found: String },
    #[error("illegal candidate transition {from} -> {to}")]
    IllegalTransition { from: String, to: String },
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Runtime,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::OutOfRange { .. }
            | Error::InvalidArgument(_)
            | Error::ConstantFeature(_)
            | Error::IllegalTransition { .. }
            | Error::NotFound(_) => ErrorKind::Validation,
            Error::Io(_) | Error::Csv(_) => ErrorKind::Io,
            Error::CorruptModel(_)
            | Error::VersionMismatch { .. }
            | Error::FamilyMismatch { .. }
            | Error::Json(_) => ErrorKind::Io,
            _ => ErrorKind::Runtime,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
