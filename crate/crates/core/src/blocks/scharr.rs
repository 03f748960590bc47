use super::Cbr;
use crate::layers::{concat_channels, join, Module, ParamKind};
use crate::tensor::{record, Rng, Tensor};
use crate::{Mode, Result};

/// Fixed Scharr gradient kernels. `gx` responds to intensity changes along
/// x (vertical edges), `gy` is its transpose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScharrKernels {
    pub gx: [[f64; 3]; 3],
    pub gy: [[f64; 3]; 3],
}

impl ScharrKernels {
    pub const STANDARD: ScharrKernels = ScharrKernels {
        gx: [[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]],
        gy: [[-3.0, -10.0, -3.0], [0.0, 0.0, 0.0], [3.0, 10.0, 3.0]],
    };
}

impl Default for ScharrKernels {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Per-channel 3x3 cross-correlation with a fixed kernel and "same"
/// output size. Borders replicate the nearest edge pixel, so a constant
/// image has zero response everywhere under a zero-sum kernel.
/// Differentiable with respect to `x` only.
pub fn depthwise3x3(x: &Tensor, kernel: [[f64; 3]; 3]) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    // For a zero-sum kernel, sum k * (s - centre) equals sum k * s but is
    // exactly zero on flat regions regardless of summation order.
    let zero_sum = kernel.iter().flatten().sum::<f64>() == 0.0;
    let mut out = vec![0.0; x.numel()];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let centre = if zero_sum { src[y * w + xx] } else { 0.0 };
                let mut acc = 0.0;
                for (i, krow) in kernel.iter().enumerate() {
                    let sy = clamp(y as isize + i as isize - 1, h);
                    for (j, &kv) in krow.iter().enumerate() {
                        let sx = clamp(xx as isize + j as isize - 1, w);
                        acc += kv * (src[sy * w + sx] - centre);
                    }
                }
                dst[y * w + xx] = acc;
            }
        }
    }
    record("depthwise3x3", &[x], vec![n, c, h, w], out, move |g, _| {
        let mut dx = vec![0.0; g.len()];
        for p in 0..n * c {
            let gp = &g[p * h * w..(p + 1) * h * w];
            let dp = &mut dx[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let gv = gp[y * w + xx];
                    for (i, krow) in kernel.iter().enumerate() {
                        let sy = clamp(y as isize + i as isize - 1, h);
                        for (j, &kv) in krow.iter().enumerate() {
                            let sx = clamp(xx as isize + j as isize - 1, w);
                            dp[sy * w + sx] += kv * gv;
                        }
                    }
                }
            }
        }
        vec![Some(dx)]
    })
}

/// `(I_x, I_y)` Scharr responses of every channel.
pub fn scharr_filter(x: &Tensor) -> Result<(Tensor, Tensor)> {
    scharr_filter_with(x, &ScharrKernels::STANDARD)
}

/// Any spatial size works: edge replication pads even a 1x1 map to 3x3.
pub fn scharr_filter_with(x: &Tensor, k: &ScharrKernels) -> Result<(Tensor, Tensor)> {
    Ok((depthwise3x3(x, k.gx)?, depthwise3x3(x, k.gy)?))
}

/// `concat(I_x, I_y)` (2C channels) projected back to C by a 1x1 CBR.
#[derive(Clone, Debug)]
pub struct ScharrBlock {
    pub kernels: ScharrKernels,
    pub proj: Cbr,
}

impl ScharrBlock {
    pub fn new(channels: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            kernels: ScharrKernels::STANDARD,
            proj: Cbr::new(2 * channels, channels, 1, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (ix, iy) = scharr_filter_with(x, &self.kernels)?;
        self.proj.forward(&concat_channels(&ix, &iy)?, mode)
    }
}

impl Module for ScharrBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}
