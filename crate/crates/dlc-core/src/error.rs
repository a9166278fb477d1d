use alloc::string::String;
use core::fmt;

/// Errors raised by core operations.
///
/// Numeric code never lets a NaN/Inf propagate silently: ops that can
/// produce one check and return [`CoreError::NonFinite`] instead.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Tensor or batch shapes are incompatible.
    ShapeMismatch { expected: String, got: String },
    /// An argument violated a documented precondition.
    InvalidArgument(String),
    /// A value left the finite range; the payload names the offender.
    NonFinite(String),
    /// An operation was called out of sequence (e.g. backward before forward).
    State(String),
    /// Training diverged or an iterative fit failed.
    Training(String),
    /// A schedule was queried in an inconsistent state.
    Schedule(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            CoreError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            CoreError::NonFinite(what) => write!(f, "non-finite value in {what}"),
            CoreError::State(msg) => write!(f, "invalid state: {msg}"),
            CoreError::Training(msg) => write!(f, "training failed: {msg}"),
            CoreError::Schedule(msg) => write!(f, "schedule inconsistency: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
