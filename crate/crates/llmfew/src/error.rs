//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by dataset ingestion, model assembly, training and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A `.ts` header line could not be parsed.
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A data row disagrees with the declared structure (e.g. wrong number
    /// of channels).
    #[error("{path}: data row {row}: {msg}")]
    Structure {
        path: String,
        row: usize,
        msg: String,
    },

    /// A data row carries a class label that the header did not declare.
    #[error("{path}: data row {row}: unknown class label {label:?}")]
    Label {
        path: String,
        row: usize,
        label: String,
    },

    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The few-shot protocol cannot be satisfied (e.g. a class has no
    /// training samples).
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// Inconsistent model configuration or a tensor shape mismatch.
    #[error("configuration error: {0}")]
    Config(String),

    /// Token sequence exceeds the backbone's position capacity.
    #[error("capacity exceeded: sequence length {got} > max_positions {max}")]
    Capacity { got: usize, max: usize },

    /// A checkpoint directory is missing entries or has mismatched shapes.
    #[error("checkpoint error at {path}: {}", offending.join(", "))]
    Checkpoint {
        path: PathBuf,
        offending: Vec<String>,
    },

    /// Training produced a non-finite loss and was aborted.
    #[error("training aborted at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    /// Experiment setup failed before any run started.
    #[error("setup error: {0}")]
    Setup(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
