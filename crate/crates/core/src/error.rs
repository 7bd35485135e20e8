//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Anything that can go wrong between reading annotations and writing a
/// report. Validation problems (bad configs, malformed files, out-of-range
/// labels) are kept distinct from runtime failures so the CLI can map them to
/// different exit codes.
#[derive(Debug, Error)]
pub enum AqaError {
    /// A configuration value violates a documented invariant.
    #[error("invalid config: {0}")]
    Config(String),

    /// An input file or record failed validation. The message lists every
    /// offending line when the source is line-oriented.
    #[error("invalid data: {0}")]
    Data(String),

    /// A referenced path does not exist or is not readable.
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    /// A metric was requested on inputs where it is mathematically undefined
    /// (fewer than two points, or zero rank variance).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Training diverged; the last finite-loss checkpoint was kept.
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    /// Propagated failure from the tensor/layer substrate.
    #[error(transparent)]
    Nn(#[from] aqa_nn::NnError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl AqaError {
    /// True for errors a user can fix by correcting inputs, as opposed to
    /// failures of the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            AqaError::Config(_)
                | AqaError::Data(_)
                | AqaError::MissingInput(_)
                | AqaError::UndefinedCorrelation(_)
        )
    }
}
