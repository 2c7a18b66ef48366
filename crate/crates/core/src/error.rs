use thiserror::Error;

/// Errors raised by the numerical layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("lifted dimension {dim} exceeds the limit of {limit}")]
    Capacity { dim: usize, limit: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{rule} does not support {what}")]
    Unsupported { rule: &'static str, what: String },
}

pub type Result<T> = std::result::Result<T, MemError>;

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> MemError {
    MemError::Shape {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
