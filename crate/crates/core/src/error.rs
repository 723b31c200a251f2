use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid op {}: {field}: {reason}", op.map(|i| i.to_string()).unwrap_or_else(|| "-".into()))]
    Validation {
        op: Option<usize>,
        field: String,
        reason: String,
    },

    #[error("unknown preset `{0}` (expected `moderate` or `high`)")]
    UnknownPreset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operator {op} is not divisible; co-execution requested")]
    IndivisibleOperator { op: usize },

    #[error("non-positive cost in observation for op {op}")]
    NonPositiveCost { op: usize },

    #[error("insufficient data: {have} rows, need at least {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("no training episodes")]
    EmptyEpisodes,

    #[error("start index {start} out of range for graph with {len} operators")]
    InvalidStartIndex { start: usize, len: usize },

    #[error("cost callback failed at op {op}: {source}")]
    CostCallback {
        op: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("search space of {size:.3e} sequences exceeds the {limit:.0e} guard")]
    SearchSpaceTooLarge { size: f64, limit: f64 },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(op: Option<usize>, field: &str, reason: impl Into<String>) -> Self {
        Error::Validation {
            op,
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
