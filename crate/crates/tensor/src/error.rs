use thiserror::Error;

/// Errors raised by tensor construction, graph ops, and layer forwards.
#[derive(Debug, Error)]
pub enum TensorError {
    /// Operand shapes cannot be combined by the requested op.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An op produced a NaN or infinite value.
    #[error("non-finite value produced by {op}")]
    NumericOverflow { op: &'static str },

    /// Backward was requested from a non-scalar root.
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    /// Dropout probability outside [0, 1].
    #[error("dropout probability {p} outside [0, 1]")]
    InvalidProbability { p: f64 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

impl TensorError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
