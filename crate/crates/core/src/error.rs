use thiserror::Error;

/// Errors raised by the sampling, optimization and metric routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
