use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on caller-supplied data was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Floating-point breakdown (NaN, runaway window growth, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn numerical(msg: impl Into<String>) -> Error {
    Error::Numerical(msg.into())
}
