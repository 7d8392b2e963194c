use thiserror::Error;

/// Errors reported by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument violates the documented precondition of an operation.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    /// A computed object does not have the structure the theory predicts
    /// (wrong band count, missing critical point, ...).
    #[error("structural failure: {0}")]
    Structural(String),
    /// A high-precision input ran out of digits.
    #[error("precision exhausted: only the first {trustworthy} terms are trustworthy")]
    PrecisionExhausted { trustworthy: usize },
    /// Integer arithmetic left the 64-bit range.
    #[error("integer overflow: {0}")]
    Overflow(String),
    /// A verified inequality failed.
    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
