use super::{Cbr, ScharrBlock};
use crate::layers::{concat_channels, join, Module, ParamKind};
use crate::spectral::SpectralTransform;
use crate::tensor::{Rng, Tensor};
use crate::{Error, Mode, Result};

/// Fast Fourier convolution: a local 3x3 CBR branch plus a global spectral
/// branch, summed. Both branches keep all `C` channels.
#[derive(Clone, Debug)]
pub struct FfcBlock {
    pub local: Cbr,
    pub global: SpectralTransform,
}

impl FfcBlock {
    pub fn new(channels: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            local: Cbr::new(channels, channels, 3, rng)?,
            global: SpectralTransform::new(channels, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        if h < 2 || w < 2 {
            return Err(Error::InvalidArgument {
                op: "ffc_block",
                msg: format!("needs at least 2x2, got {h}x{w}"),
            });
        }
        self.local.forward(x, mode)?.add(&self.global.forward(x, mode)?)
    }
}

impl Module for FfcBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.local.visit(&join(prefix, "local"), f);
        self.global.visit(&join(prefix, "global"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.local.visit_mut(&join(prefix, "local"), f);
        self.global.visit_mut(&join(prefix, "global"), f);
    }
}

/// SC-FFC: Scharr and FFC branches concatenated, fused back to `C` channels
/// by a 1x1 CBR. No residual connection to the input.
#[derive(Clone, Debug)]
pub struct ScFfcBlock {
    pub scharr: ScharrBlock,
    pub ffc: FfcBlock,
    pub fuse: Cbr,
}

impl ScFfcBlock {
    pub fn new(channels: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            scharr: ScharrBlock::new(channels, rng)?,
            ffc: FfcBlock::new(channels, rng)?,
            fuse: Cbr::new(2 * channels, channels, 1, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let s = self.scharr.forward(x, mode)?;
        let f = self.ffc.forward(x, mode)?;
        self.fuse.forward(&concat_channels(&s, &f)?, mode)
    }
}

impl Module for ScFfcBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.scharr.visit(&join(prefix, "scharr"), f);
        self.ffc.visit(&join(prefix, "ffc"), f);
        self.fuse.visit(&join(prefix, "fuse"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.scharr.visit_mut(&join(prefix, "scharr"), f);
        self.ffc.visit_mut(&join(prefix, "ffc"), f);
        self.fuse.visit_mut(&join(prefix, "fuse"), f);
    }
}
