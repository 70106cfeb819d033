use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; nothing was requested.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),

    #[error("template placeholder {{{0}}} has no value")]
    MissingPlaceholder(String),

    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("malformed response: {0}")]
    Malformed(String),

    #[error("answer token {0:?} not among the returned log-probabilities")]
    MissingToken(String),

    #[error("{path}:{line}: {message}")]
    Dataset {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] venncal_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the batch should stop rather than record the failure.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::MissingCredential(_) | Error::Io { .. }
        )
    }
}
