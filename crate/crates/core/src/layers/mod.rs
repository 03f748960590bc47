//! Trainable building blocks: convolution, batch normalization, pooling,
//! transposed-convolution upsampling and channel concatenation.

mod conv;
mod norm;
mod pool;
mod shape;
mod upconv;

pub use conv::{conv2d, Conv2d, PadMode};
pub use norm::{BatchNorm2d, BN_EPSILON, BN_MOMENTUM};
pub use pool::maxpool2d;
pub use shape::{concat_channels, slice_channels};
pub use upconv::{upconv2x, UpConv2x};

use crate::tensor::{Rng, Tensor};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer and counted by `param_count`.
    Trainable,
    /// State saved in checkpoints but not trained (batch-norm running stats).
    Buffer,
}

/// Anything owning named tensors.
///
/// Names are dot-separated paths built from `prefix`; they are unique
/// within a model and stable across builds of the same config.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t, kind| {
            if kind == ParamKind::Trainable {
                n += t.numel();
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn activation(x: &Tensor, kind: Activation) -> Result<Tensor> {
    match kind {
        Activation::Relu => x.relu(),
        Activation::Sigmoid => x.sigmoid(),
    }
}

/// Kaiming-normal weights, std = sqrt(2 / fan_in).
pub(crate) fn kaiming(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor> {
    Tensor::randn(shape, 0.0, (2.0 / fan_in as f64).sqrt(), rng)
}
