use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented bounds.
    #[error("configuration error: {0}")]
    Config(String),

    /// A referenced identity, question, facet or image does not exist.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// Input data violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller-supplied argument is out of range.
    #[error("argument error: {0}")]
    Argument(String),

    /// An operation was attempted in the wrong session state.
    #[error("state error: {0}")]
    State(String),

    /// An exhaustive search was refused because the instance is too large.
    #[error("refused: {0}")]
    Refused(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn lookup(msg: impl Into<String>) -> Self {
        Error::Lookup(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
