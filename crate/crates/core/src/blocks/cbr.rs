use crate::layers::{join, BatchNorm2d, Conv2d, Module, ParamKind};
use crate::tensor::{Rng, Tensor};
use crate::{Mode, Result};

/// Conv -> BatchNorm -> ReLU.
#[derive(Clone, Debug)]
pub struct Cbr {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    /// Skip the normalization stage (test hook).
    pub bypass_norm: bool,
}

impl Cbr {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(c_in, c_out, kernel, rng)?,
            bn: BatchNorm2d::new(c_out)?,
            bypass_norm: false,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        let y = if self.bypass_norm { y } else { self.bn.forward(&y, mode)? };
        y.relu()
    }
}

impl Module for Cbr {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}
