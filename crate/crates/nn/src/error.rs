//! Error type shared by the layer and checkpoint modules.

use thiserror::Error;

/// Failures surfaced by layers, optimizers, and checkpoint I/O.
#[derive(Debug, Error)]
pub enum NnError {
    /// An input tensor did not have the shape a layer requires.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// Underlying file I/O failed while reading or writing a checkpoint.
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),

    /// The checkpoint bytes did not parse as the expected container format.
    #[error("checkpoint format: {0}")]
    Format(String),

    /// Checkpoint tensors and network parameters disagree; the message lists
    /// every missing, unexpected, and shape-mismatched entry.
    #[error("checkpoint/parameter mismatch:\n{0}")]
    ParamMismatch(String),
}

impl NnError {
    /// Convenience constructor for [`NnError::ShapeMismatch`].
    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        NnError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
