//! Dense neural-network building blocks for volumetric (3-D) models.
//!
//! Everything here is plain `ndarray` code with hand-written backward passes:
//! no autograd, no graph, no external ML runtime. Layers own their parameters
//! and gradient buffers, cache whatever the backward pass needs during a
//! `train`-mode forward, and release that cache when `backward` runs.
//!
//! Design points that the rest of the workspace relies on:
//!
//! * Layers are generic over [`Scalar`] (`f32` or `f64`). Networks train in
//!   `f32`; gradient-check instantiations use `f64` so central finite
//!   differences are meaningful.
//! * All randomness (init, dropout) flows through caller-supplied
//!   [`rand_chacha::ChaCha8Rng`] state, so identical seeds give bit-identical
//!   parameters and masks.
//! * Convolutions run as chunked im2col + GEMM with a bounded scratch buffer;
//!   everything executes sequentially in a fixed order, so results are
//!   reproducible down to the bit.
//! * [`checkpoint`] serializes named tensors as raw little-endian bytes and
//!   round-trips them bit-exactly.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod dropout;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod gru;
pub mod init;
pub mod linear;
pub mod norm;
pub mod ops;
pub mod param;
pub mod pool;
pub mod scalar;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, LoadReport, TensorEntry};
pub use conv::Conv3d;
pub use dropout::Dropout;
pub use embedding::Embedding;
pub use error::NnError;
pub use gru::GruCell;
pub use linear::Linear;
pub use norm::BatchNorm3d;
pub use param::{NamedParams, NamedParamsMut, Param};
pub use pool::{global_avg_pool, global_avg_pool_backward, MaxPool3d};
pub use scalar::{Dtype, Scalar};

/// Workspace-wide result alias for fallible layer and checkpoint operations.
pub type Result<T> = std::result::Result<T, NnError>;
