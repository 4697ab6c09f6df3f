//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor operations, model assembly, data handling,
/// training, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands have incompatible shapes for the named operation.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A configuration value violates a documented constraint.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// `backward` was called on a tensor that is not a single scalar.
    #[error("backward requires a scalar loss, got {0} elements")]
    NonScalarLoss(usize),

    /// `backward` was called on a tensor with no recorded computation.
    #[error("loss is detached from any recorded computation graph")]
    DetachedGraph,

    /// A stored file does not match its declared layout.
    #[error("format error: {0}")]
    Format(String),

    /// A config override names a key that does not exist.
    #[error("unknown configuration key: {0}")]
    UnknownKey(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
