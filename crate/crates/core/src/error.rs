use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("line {line}, column `{column}`: {msg}")]
    Validation {
        line: u64,
        column: String,
        msg: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing key: {0}")]
    MissingKey(String),

    #[error("optimization failed after fallback ({reason}); best loss {best_loss}")]
    Optimization {
        reason: String,
        best: Vec<f64>,
        best_loss: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
