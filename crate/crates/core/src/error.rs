use thiserror::Error;

/// Errors produced by tensor, sketching and decomposition routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A randomized solve drew a numerically singular sketch. The caller should
    /// redraw with a fresh seed; this is not a failure of the input.
    #[error("sketched system is numerically singular, redraw required")]
    Retry,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
