use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error in column `{column}` row {row}: {message}")]
    Parse {
        column: String,
        row: usize,
        message: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class `{class}` has {size} members, fewer than {required} folds")]
    ClassTooSmall {
        class: String,
        size: usize,
        required: usize,
    },
    #[error("{count} rows are never out-of-bag (first: {first}); proximities undefined")]
    NoOutOfBag { count: usize, first: usize },
    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("unknown representation `{0}`")]
    UnknownRepresentation(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Validation errors are caller mistakes (bad config, bad schema, bad
    /// arguments) as opposed to failures while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Config(_)
                | Error::InvalidInput(_)
                | Error::UnknownMetric(_)
                | Error::UnknownRepresentation(_)
                | Error::DimensionMismatch { .. }
                | Error::ClassTooSmall { .. }
                | Error::Parse { .. }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
