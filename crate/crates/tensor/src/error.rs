use thiserror::Error;

use crate::Shape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("{op}: invalid shape {shape}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Shape,
        reason: String,
    },
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: Shape,
        len: usize,
        expected: usize,
    },
    #[error("all dimensions must be >= 1, got {0:?}")]
    ZeroDim([usize; 4]),
    #[error("{op}: non-finite input ({what})")]
    NonFinite { op: &'static str, what: String },
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("backward called on a value that is not recorded on the tape")]
    Untracked,
    #[error("{0}")]
    Config(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
