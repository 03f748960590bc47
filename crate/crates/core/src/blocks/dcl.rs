use super::{AttentionGate, Cbr, ScFfcBlock};
use crate::layers::{concat_channels, join, maxpool2d, Module, ParamKind, UpConv2x};
use crate::tensor::{Rng, Tensor};
use crate::{Error, Mode, Result};

/// Double-convolution layer: `cbr1 -> SC-FFC -> [vertical AG] -> cbr2`,
/// optionally followed by 2x2 max-pooling (encoder stages).
#[derive(Clone, Debug)]
pub struct DclBlock {
    pub cbr1: Cbr,
    pub sc_ffc: ScFfcBlock,
    /// Gate = block input, signal = SC-FFC output.
    pub vertical_ag: Option<AttentionGate>,
    pub cbr2: Cbr,
    pub pool: bool,
}

impl DclBlock {
    /// Encoder stage: carries a vertical attention gate and trailing pool.
    pub fn encoder(c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        let cbr1 = Cbr::new(c_in, c_out, 3, rng)?;
        let sc_ffc = ScFfcBlock::new(c_out, rng)?;
        let ag = AttentionGate::new(c_in, c_out, rng)?;
        let cbr2 = Cbr::new(c_out, c_out, 3, rng)?;
        Ok(Self {
            cbr1,
            sc_ffc,
            vertical_ag: Some(ag),
            cbr2,
            pool: true,
        })
    }

    /// Bottleneck stage: no gate, no pooling.
    pub fn middle(c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            cbr1: Cbr::new(c_in, c_out, 3, rng)?,
            sc_ffc: ScFfcBlock::new(c_out, rng)?,
            vertical_ag: None,
            cbr2: Cbr::new(c_out, c_out, 3, rng)?,
            pool: false,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.cbr2.conv.out_channels()
    }

    /// Pre-pool features.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let part1 = self.sc_ffc.forward(&self.cbr1.forward(x, mode)?, mode)?;
        let gated = match &self.vertical_ag {
            Some(ag) => ag.forward(x, &part1)?,
            None => part1,
        };
        self.cbr2.forward(&gated, mode)
    }

    /// `(skip, down)`: pre-pool features and their pooled version.
    pub fn encode(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        let (_, _, h, w) = x.dims4()?;
        if !self.pool {
            return Err(Error::InvalidArgument {
                op: "dcl_encoder",
                msg: "block has no pooling stage".into(),
            });
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument {
                op: "dcl_encoder",
                msg: format!("spatial dims must be even, got {h}x{w}"),
            });
        }
        let skip = self.forward(x, mode)?;
        let down = maxpool2d(&skip)?;
        Ok((skip, down))
    }
}

impl Module for DclBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.cbr1.visit(&join(prefix, "cbr1"), f);
        self.sc_ffc.visit(&join(prefix, "sc_ffc"), f);
        if let Some(ag) = &self.vertical_ag {
            ag.visit(&join(prefix, "vertical_ag"), f);
        }
        self.cbr2.visit(&join(prefix, "cbr2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.cbr1.visit_mut(&join(prefix, "cbr1"), f);
        self.sc_ffc.visit_mut(&join(prefix, "sc_ffc"), f);
        if let Some(ag) = &mut self.vertical_ag {
            ag.visit_mut(&join(prefix, "vertical_ag"), f);
        }
        self.cbr2.visit_mut(&join(prefix, "cbr2"), f);
    }
}

/// Decoder stage: upsample the deeper features (halving channels), gate
/// the matching skip with them, concatenate, then run the DCL body.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub up: UpConv2x,
    pub gate: AttentionGate,
    pub body: DclBlock,
}

impl DecoderBlock {
    /// `c_deep` channels in from below, `c` channels out (and in the skip).
    pub fn new(c_deep: usize, c: usize, rng: &mut Rng) -> Result<Self> {
        let up = UpConv2x::new(c_deep, c, rng)?;
        let gate = AttentionGate::new(c, c, rng)?;
        let body = DclBlock::middle(2 * c, c, rng)?;
        Ok(Self { up, gate, body })
    }

    pub fn forward(&self, deeper: &Tensor, skip: &Tensor, mode: Mode) -> Result<Tensor> {
        let up = self.up.forward(deeper)?;
        if up.shape() != skip.shape() {
            return Err(Error::ShapeMismatch {
                op: "dcl_decoder (upsampled vs skip)",
                lhs: up.shape().to_vec(),
                rhs: skip.shape().to_vec(),
            });
        }
        let attended = self.gate.forward(&up, skip)?;
        self.body.forward(&concat_channels(&up, &attended)?, mode)
    }
}

impl Module for DecoderBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.up.visit(&join(prefix, "up"), f);
        self.gate.visit(&join(prefix, "gate"), f);
        self.body.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.up.visit_mut(&join(prefix, "up"), f);
        self.gate.visit_mut(&join(prefix, "gate"), f);
        self.body.visit_mut(prefix, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoder_shapes() {
        let mut rng = Rng::new(1);
        let block = DclBlock::encoder(1, 3, &mut rng).unwrap();
        let x = Tensor::randn(&[2, 1, 8, 8], 0.0, 1.0, &mut rng).unwrap();
        let (skip, down) = block.encode(&x, Mode::Train).unwrap();
        assert_eq!(skip.shape(), &[2, 3, 8, 8]);
        assert_eq!(down.shape(), &[2, 3, 4, 4]);
        assert_eq!(block.out_channels(), 3);
    }

    #[test]
    fn encoder_rejects_odd_dims() {
        let mut rng = Rng::new(1);
        let block = DclBlock::encoder(1, 2, &mut rng).unwrap();
        assert!(block.encode(&Tensor::zeros(&[1, 1, 8, 7]).unwrap(), Mode::Train).is_err());
        let middle = DclBlock::middle(1, 2, &mut rng).unwrap();
        assert!(middle.encode(&Tensor::zeros(&[1, 1, 8, 8]).unwrap(), Mode::Train).is_err());
    }

    #[test]
    fn decoder_shapes_and_zero_skip() {
        let mut rng = Rng::new(4);
        let block = DecoderBlock::new(4, 2, &mut rng).unwrap();
        let deeper = Tensor::randn(&[1, 4, 4, 4], 0.0, 1.0, &mut rng).unwrap();
        let skip = Tensor::zeros(&[1, 2, 8, 8]).unwrap();
        let y = block.forward(&deeper, &skip, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[1, 2, 8, 8]);
        assert!(y.data().iter().all(|v| v.is_finite()));
        let attended = block.gate.forward(&block.up.forward(&deeper).unwrap(), &skip).unwrap();
        assert!(attended.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decoder_spatial_mismatch() {
        let mut rng = Rng::new(4);
        let block = DecoderBlock::new(4, 2, &mut rng).unwrap();
        let deeper = Tensor::zeros(&[1, 4, 4, 4]).unwrap();
        assert!(block.forward(&deeper, &Tensor::zeros(&[1, 2, 6, 6]).unwrap(), Mode::Train).is_err());
    }

    #[test]
    fn parameter_names_are_unique() {
        let block = DecoderBlock::new(4, 2, &mut Rng::new(0)).unwrap();
        let mut names = Vec::new();
        block.visit("dec", &mut |n, _, _| names.push(n.to_string()));
        let before = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), before);
        assert!(names.iter().any(|n| n == "dec.cbr1.conv.weight"));
    }
}
