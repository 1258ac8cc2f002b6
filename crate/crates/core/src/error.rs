use thiserror::Error;

/// Errors raised by law construction, numerical evaluation and classification.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A series, quadrature or fixed-point iteration failed to reach its tolerance.
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    /// The operation does not apply to the given inputs (wrong process variant,
    /// out-of-order path access, ...).
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn numeric<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::NumericFailure(msg.into()))
}

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
