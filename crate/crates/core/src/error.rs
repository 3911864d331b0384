use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    /// Operand shapes violate the operation's contract.
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },

    /// An operation produced NaN or infinity.
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("configuration error: {0}")]
    Config(String),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, shapes: &[&[usize]]) -> Self {
        TensorError::ShapeMismatch { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() }
    }

    pub(crate) fn invalid(op: &'static str, message: impl Into<String>) -> Self {
        TensorError::InvalidArgument { op, message: message.into() }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        TensorError::Config(message.into())
    }
}
