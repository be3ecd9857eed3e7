//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Exact enumeration was requested beyond the configured cap.
    #[error("sequence of length {length} exceeds exact enumeration cap {cap}")]
    BudgetExceeded { length: usize, cap: usize },

    /// The external classifier channel broke (process died, pipe closed,
    /// connection refused). `detail` carries the offending payload or the
    /// underlying I/O message.
    #[error("classifier transport failure: {detail}")]
    Transport { detail: String },

    /// The external classifier answered with a malformed or out-of-order
    /// frame.
    #[error("classifier protocol violation: {detail}")]
    Protocol { detail: String },

    /// A solver or estimator produced an unusable result.
    #[error("numerical failure: {detail}")]
    Numerical { detail: String },

    /// Invalid configuration or input data.
    #[error("validation failure: {0}")]
    Validation(String),

    /// Surrogate training could not proceed.
    #[error("training failure: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<String>, line: usize, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            line,
            source,
        }
    }
}
