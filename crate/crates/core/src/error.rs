use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum SelsaError {
    /// Shapes, sizes or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented precondition of an operation does not hold for the input.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Malformed input data (labels out of range, bad CSV rows, ...).
    #[error("input error: {0}")]
    Input(String),

    /// The backward pass was handed a cache from a different parameter state.
    #[error("stale forward cache: parameters changed since the forward pass")]
    StaleCache,

    /// Training produced a non-finite loss.
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, SelsaError>;

impl SelsaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SelsaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        SelsaError::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        SelsaError::Json {
            path: path.into(),
            source,
        }
    }
}
