use thiserror::Error;

/// Errors surfaced by tensor construction and graph operations.
#[derive(Debug, Error)]
pub enum NdError {
    /// Operand shapes are incompatible for the named op.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An argument violates the op's contract (bad axis, empty input, ...).
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    /// A NaN or infinity reached a validation boundary.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
}

impl NdError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        NdError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        NdError::Invalid {
            op,
            msg: msg.into(),
        }
    }
}
