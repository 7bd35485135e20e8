//! Multitask action-quality assessment on dive videos.
//!
//! The library covers the full experiment loop around two 3-D convolutional
//! backbones — a C3D trunk whose clip features are averaged before the heads
//! (`C3dAvgMtl`), and a lighter multiscale dilated-convolution network
//! (`MscadcMtl`) — each trained jointly on three tasks:
//!
//! * **score regression** — a judged quality score in `[0, 1]` after
//!   normalization, optimized with a combined L2 + L1 penalty;
//! * **factorized action classification** — five categorical sub-labels
//!   (position, armstand, rotation type, somersault and twist counts) with
//!   summed cross-entropies;
//! * **caption generation** — a GRU encoder/decoder trained teacher-forced
//!   with token negative log-likelihood.
//!
//! Around the models sit [`losses`] and [`metrics`] (rank correlation,
//! per-sub-task accuracy, BLEU/ROUGE-L/CIDEr), a [`datapipe`] that reads
//! frame directories and can synthesize a fully labeled toy dataset from
//! moving-rectangle renders, and a [`harness`] with the training loop plus
//! the ablation / dataset-size / linear-probe experiment drivers.
//!
//! Heavy lifting (convolutions, recurrence, Adam, checkpoints) lives in
//! [`aqa_nn`]; this crate assembles those blocks into the domain models and
//! keeps every contract deterministic under a caller-supplied seed.

pub mod backbone;
pub mod captioning;
pub mod data;
pub mod datapipe;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod mtl;

pub use data::{
    AnnotationHeader, AnnotationRecord, AqaScore, CaptionTokens, DiveLabel, DiveLabelSchema,
    Vocabulary,
};
pub use error::AqaError;
pub use losses::{LossReport, LossWeights};
pub use metrics::EvalReport;
pub use mtl::{Architecture, ModelConfig, MtlGrads, MtlModel, MtlOutput, TaskConfig};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, AqaError>;
