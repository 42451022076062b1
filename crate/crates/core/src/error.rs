use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("label at line {line} is {value}, expected -1 or 1")]
    LabelDomain { line: usize, value: String },

    #[error("layout mismatch: {columns} feature columns but p x r = {expected}")]
    LayoutMismatch { columns: usize, expected: usize },

    #[error("non-finite feature value at line {line}, column {column}")]
    NonFinite { line: usize, column: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid value for {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("invalid group partition: {0}")]
    InvalidPartition(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("objective diverged at iteration {iteration} (value {value})")]
    Diverged { iteration: usize, value: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    /// Command-line arguments that do not parse.
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
