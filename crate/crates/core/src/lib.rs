//! SFA-UNet for infrared small-object segmentation.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense `f64` arrays with a reverse-mode tape
//! - [`spectral`]: real 2-D FFT and the frequency-domain transform used by FFC
//! - [`layers`]: convolution, batch norm, pooling, transposed convolution
//! - [`blocks`]: Scharr convolution, FFC, SC-FFC fusion, attention gates, DCL blocks
//! - [`model`]: the assembled network and its checkpoint format
//! - [`metrics`]: IoU, nIoU, Pd, Fa, F-score and ROC-AUC
//! - [`train`]: BCE loss, AdamW, datasets and the training loop
//! - [`check`]: the embedded oracle suite behind `sfaunet check`

pub mod blocks;
pub mod check;
mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Fill, Rng, Tape, Tensor};

/// Forward-pass mode. Batch normalization uses batch statistics in `Train`
/// and running statistics in `Eval`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
