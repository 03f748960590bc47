//! The assembled SFA-UNet.
//!
//! Three encoder DCL stages (each with a vertical attention gate and 2x2
//! max-pooling), a DCL bottleneck, three decoder stages whose skips pass
//! through horizontal attention gates, and a 1x1 convolution + sigmoid head.

mod checkpoint;

pub use checkpoint::{load, read_checkpoint, save, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::blocks::{DclBlock, DecoderBlock};
use crate::layers::{join, Conv2d, Module, ParamKind};
use crate::tensor::{Rng, Tensor};
use crate::{Error, Mode, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub encoder_widths: [usize; 3],
    pub middle_width: usize,
    pub decoder_widths: [usize; 3],
    pub output_channels: usize,
    /// `(H, W)`, both divisible by 8.
    pub input_size: (usize, usize),
    /// Multiplier applied to every hidden width; scaled widths are rounded
    /// and clamped to at least 1.
    pub width_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            encoder_widths: [32, 64, 128],
            middle_width: 256,
            decoder_widths: [128, 64, 32],
            output_channels: 1,
            input_size: (256, 256),
            width_scale: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Widths (8, 16, 32) / 64 on 64x64 inputs.
    pub fn quarter(seed: u64) -> Self {
        Self {
            input_size: (64, 64),
            width_scale: 0.25,
            seed,
            ..Self::default()
        }
    }

    /// Widths (2, 4, 8) / 16 on 16x16 inputs; small enough for exhaustive
    /// gradient checks.
    pub fn micro(seed: u64) -> Self {
        Self {
            input_size: (16, 16),
            width_scale: 1.0 / 16.0,
            seed,
            ..Self::default()
        }
    }

    fn scale(&self, w: usize) -> usize {
        ((w as f64 * self.width_scale).round() as usize).max(1)
    }

    pub fn scaled_encoder_widths(&self) -> [usize; 3] {
        self.encoder_widths.map(|w| self.scale(w))
    }

    pub fn scaled_middle_width(&self) -> usize {
        self.scale(self.middle_width)
    }

    pub fn scaled_decoder_widths(&self) -> [usize; 3] {
        self.decoder_widths.map(|w| self.scale(w))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let (h, w) = self.input_size;
        // three poolings must leave at least 2x2 for the spectral transform
        if h < 16 || w < 16 || h % 8 != 0 || w % 8 != 0 {
            return bad(format!("input size {h}x{w} must be multiples of 8, at least 16"));
        }
        if !(self.width_scale.is_finite() && self.width_scale > 0.0) {
            return bad(format!("width_scale must be positive, got {}", self.width_scale));
        }
        if self.input_channels == 0 || self.output_channels == 0 {
            return bad("input and output channels must be positive".into());
        }
        let mut rev = self.encoder_widths;
        rev.reverse();
        if rev != self.decoder_widths {
            return bad(format!(
                "decoder widths {:?} must mirror encoder widths {:?}",
                self.decoder_widths, self.encoder_widths
            ));
        }
        if self.encoder_widths.contains(&0) || self.middle_width == 0 {
            return bad("widths must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoders: Vec<DclBlock>,
    pub middle: DclBlock,
    pub decoders: Vec<DecoderBlock>,
    pub head: Conv2d,
}

impl Model {
    /// Deterministic construction: the same config (including seed) always
    /// yields bit-identical parameters.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let enc = config.scaled_encoder_widths();
        let mid = config.scaled_middle_width();
        let dec = config.scaled_decoder_widths();

        let mut encoders = Vec::with_capacity(3);
        let mut c_in = config.input_channels;
        for &c in &enc {
            encoders.push(DclBlock::encoder(c_in, c, &mut rng)?);
            c_in = c;
        }
        let middle = DclBlock::middle(c_in, mid, &mut rng)?;
        let mut decoders = Vec::with_capacity(3);
        let mut c_deep = mid;
        for &c in &dec {
            decoders.push(DecoderBlock::new(c_deep, c, &mut rng)?);
            c_deep = c;
        }
        let head = Conv2d::new(c_deep, config.output_channels, 1, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            encoders,
            middle,
            decoders,
            head,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let (eh, ew) = self.config.input_size;
        if (c, h, w) != (self.config.input_channels, eh, ew) {
            return Err(Error::ShapeMismatch {
                op: "model input",
                lhs: x.shape().to_vec(),
                rhs: vec![x.shape()[0], self.config.input_channels, eh, ew],
            });
        }
        Ok(())
    }

    /// Pre-sigmoid output; training computes the loss from this.
    pub fn forward_logits(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut h = x.clone();
        for enc in &self.encoders {
            let (skip, down) = enc.encode(&h, mode)?;
            skips.push(skip);
            h = down;
        }
        h = self.middle.forward(&h, mode)?;
        for (dec, skip) in self.decoders.iter().zip(skips.iter().rev()) {
            h = dec.forward(&h, skip, mode)?;
        }
        self.head.forward(&h)
    }

    /// Per-pixel probabilities strictly inside (0, 1), shaped like the input.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_logits(x, mode)?.sigmoid_open()
    }

    /// Names of all trainable tensors, in visiting order.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit("", &mut |n, _, kind| {
            if kind == ParamKind::Trainable {
                names.push(n.to_string());
            }
        });
        names
    }
}

impl Module for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        for (i, e) in self.encoders.iter().enumerate() {
            e.visit(&join(prefix, &format!("enc{}", i + 1)), f);
        }
        self.middle.visit(&join(prefix, "middle"), f);
        for (i, d) in self.decoders.iter().enumerate() {
            d.visit(&join(prefix, &format!("dec{}", i + 1)), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        for (i, e) in self.encoders.iter_mut().enumerate() {
            e.visit_mut(&join(prefix, &format!("enc{}", i + 1)), f);
        }
        self.middle.visit_mut(&join(prefix, "middle"), f);
        for (i, d) in self.decoders.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("dec{}", i + 1)), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
