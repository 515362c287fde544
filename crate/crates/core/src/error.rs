use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid CSD word: {0}")]
    InvalidCsd(String),
    #[error("threshold {0} is above the supported maximum of 2")]
    ThresholdOutOfRange(u8),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("accumulator overflow at output ({row}, {col}): {value} exceeds 32 bits")]
    AccumulatorOverflow { row: usize, col: usize, value: i64 },
    #[error("malformed container: {0}")]
    Format(String),
    #[error("workload mismatch: {0}")]
    WorkloadMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidCsd(_) => "invalid_csd",
            Error::ThresholdOutOfRange(_) => "threshold_out_of_range",
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::AccumulatorOverflow { .. } => "accumulator_overflow",
            Error::Format(_) => "format",
            Error::WorkloadMismatch(_) => "workload_mismatch",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
