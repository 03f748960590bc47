//! Composite blocks of SFA-UNet: Scharr convolution, the FFC block, their
//! SC-FFC fusion, additive attention gates and the double-convolution
//! layers (DCL) used by the encoder, middle and decoder stages.

mod attention;
mod cbr;
mod dcl;
mod ffc;
mod scharr;

pub use attention::{attention_coefficients, resize_nearest, AttentionGate};
pub use cbr::Cbr;
pub use dcl::{DclBlock, DecoderBlock};
pub use ffc::{FfcBlock, ScFfcBlock};
pub use scharr::{depthwise3x3, scharr_filter, scharr_filter_with, ScharrBlock, ScharrKernels};
