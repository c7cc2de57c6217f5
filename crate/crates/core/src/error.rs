use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the QGen pipeline components.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("template `{template}`: {message}")]
    Template { template: String, message: String },
    #[error("document `{doc_id}`: {source}")]
    ForDocument {
        doc_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}

/// Failures talking to a generation, embedding or scoring service.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Connection refused, timeouts, 5xx. Worth retrying.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned no token log-probabilities; enable logprob capture (request `logprobs: 1`)")]
    MissingLogprobs,
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
