//! Error type shared by tensor construction, graph building, and backward.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch { context: &'static str, detail: String },

    #[error("invalid argument in {context}: {detail}")]
    InvalidArgument { context: &'static str, detail: String },

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("non-finite gradient encountered in reverse pass at node {node} ({op})")]
    NonFiniteGrad { op: &'static str, node: usize },

    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(String),

    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
