//! Real 2-D Fourier transforms and the frequency-domain transform of the
//! FFC global branch.
//!
//! Conventions: the forward transform is unnormalized, the inverse carries
//! the `1/(H*W)` factor, and half-width storage keeps `W/2 + 1` bins per row
//! (the Nyquist bin is kept for even `W`).
//!
//! Inside the autodiff graph a spectrum is a real tensor `[N, 2C, H, W/2+1]`
//! holding the real parts in channels `0..C` and the imaginary parts in
//! `C..2C`.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::layers::{BatchNorm2d, Conv2d, Module, ParamKind};
use crate::tensor::{record, Rng, Tensor};
use crate::{Error, Mode, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Half-width spectra of a batch of multi-channel real images.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumBuffer {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub half_width: usize,
    /// Interleaved `(re, im)` pairs, ordered `[batch][channel][row][bin]`.
    pub data: Vec<f64>,
}

impl SpectrumBuffer {
    pub fn zeros(batch: usize, channels: usize, height: usize, half_width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            half_width,
            data: vec![0.0; batch * channels * height * half_width * 2],
        }
    }

    pub fn bin(&self, n: usize, c: usize, k: usize, l: usize) -> Complex<f64> {
        let i = (((n * self.channels + c) * self.height + k) * self.half_width + l) * 2;
        Complex::new(self.data[i], self.data[i + 1])
    }

    pub fn set_bin(&mut self, n: usize, c: usize, k: usize, l: usize, v: Complex<f64>) {
        let i = (((n * self.channels + c) * self.height + k) * self.half_width + l) * 2;
        self.data[i] = v.re;
        self.data[i + 1] = v.im;
    }

    fn plane(&self, p: usize) -> Vec<Complex<f64>> {
        let len = self.height * self.half_width;
        self.data[p * len * 2..(p + 1) * len * 2]
            .chunks_exact(2)
            .map(|c| Complex::new(c[0], c[1]))
            .collect()
    }
}

fn fft_inplace(buf: &mut [Complex<f64>], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let fft = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        fft.process(buf);
    });
}

/// Unnormalized forward transform of one `h x w` plane; `h x (w/2+1)` bins.
fn rfft2_plane(x: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    let wh = half_width(w);
    let mut out = vec![Complex::default(); h * wh];
    let mut row = vec![Complex::default(); w];
    for y in 0..h {
        for (r, &v) in row.iter_mut().zip(&x[y * w..(y + 1) * w]) {
            *r = Complex::new(v, 0.0);
        }
        fft_inplace(&mut row, false);
        out[y * wh..(y + 1) * wh].copy_from_slice(&row[..wh]);
    }
    let mut col = vec![Complex::default(); h];
    for l in 0..wh {
        for k in 0..h {
            col[k] = out[k * wh + l];
        }
        fft_inplace(&mut col, false);
        for k in 0..h {
            out[k * wh + l] = col[k];
        }
    }
    out
}

/// Inverse of [`rfft2_plane`] including the `1/(h*w)` factor.
///
/// Evaluates `x = 1/(hw) * sum_k sum_l c_l * Re(Y[k,l] e^{i theta})` with
/// `c_l = 1` for the DC and (even `w`) Nyquist columns and 2 otherwise,
/// which is exactly the Hermitian-extension inverse for valid spectra.
fn irfft2_plane(spec: &[Complex<f64>], h: usize, w: usize) -> Vec<f64> {
    let wh = half_width(w);
    let mut z = spec.to_vec();
    let mut col = vec![Complex::default(); h];
    for l in 0..wh {
        for k in 0..h {
            col[k] = z[k * wh + l];
        }
        fft_inplace(&mut col, true);
        for k in 0..h {
            z[k * wh + l] = col[k];
        }
    }
    let scale = 1.0 / (h * w) as f64;
    let mut out = vec![0.0; h * w];
    let mut row = vec![Complex::default(); w];
    for y in 0..h {
        let zr = &z[y * wh..(y + 1) * wh];
        row[..wh].copy_from_slice(zr);
        for l in wh..w {
            row[l] = zr[w - l].conj();
        }
        fft_inplace(&mut row, true);
        for (o, v) in out[y * w..(y + 1) * w].iter_mut().zip(&row) {
            *o = v.re * scale;
        }
    }
    out
}

/// Column weight `c_l` of the half-width inverse.
fn bin_weight(l: usize, w: usize) -> f64 {
    if l == 0 || (w % 2 == 0 && l == w / 2) {
        1.0
    } else {
        2.0
    }
}

fn check_spatial(op: &'static str, h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument {
            op,
            msg: format!("spatial dims must be at least 2x2, got {h}x{w}"),
        });
    }
    Ok(())
}

/// Forward real 2-D FFT of every channel plane of `[N,C,H,W]`.
pub fn rfft2(x: &Tensor) -> Result<SpectrumBuffer> {
    let (n, c, h, w) = x.dims4()?;
    check_spatial("rfft2", h, w)?;
    let wh = half_width(w);
    let mut s = SpectrumBuffer::zeros(n, c, h, wh);
    for p in 0..n * c {
        let bins = rfft2_plane(&x.data()[p * h * w..(p + 1) * h * w], h, w);
        for (j, b) in bins.iter().enumerate() {
            s.data[(p * h * wh + j) * 2] = b.re;
            s.data[(p * h * wh + j) * 2 + 1] = b.im;
        }
    }
    Ok(s)
}

/// Inverse of [`rfft2`], producing `[N,C,H,target_width]`.
pub fn irfft2(s: &SpectrumBuffer, target_width: usize) -> Result<Tensor> {
    if s.half_width != half_width(target_width) {
        return Err(Error::InvalidArgument {
            op: "irfft2",
            msg: format!(
                "half width {} does not match target width {target_width}",
                s.half_width
            ),
        });
    }
    check_spatial("irfft2", s.height, target_width)?;
    let (h, w) = (s.height, target_width);
    let mut out = Vec::with_capacity(s.batch * s.channels * h * w);
    for p in 0..s.batch * s.channels {
        out.extend(irfft2_plane(&s.plane(p), h, w));
    }
    Tensor::new(&[s.batch, s.channels, h, w], out)
}

/// Differentiable [`rfft2`] with real/imaginary parts packed along
/// channels: `[N,C,H,W] -> [N,2C,H,W/2+1]`.
pub fn rfft2_packed(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    check_spatial("rfft2", h, w)?;
    let wh = half_width(w);
    let plane = h * wh;
    let mut out = vec![0.0; n * 2 * c * plane];
    for i in 0..n {
        for ch in 0..c {
            let p = i * c + ch;
            let bins = rfft2_plane(&x.data()[p * h * w..(p + 1) * h * w], h, w);
            let re = (i * 2 * c + ch) * plane;
            let im = (i * 2 * c + c + ch) * plane;
            for (j, b) in bins.iter().enumerate() {
                out[re + j] = b.re;
                out[im + j] = b.im;
            }
        }
    }
    record("rfft2", &[x], vec![n, 2 * c, h, wh], out, move |g, _| {
        // adjoint: dx = Re(sum_{k,l} G e^{+i theta}) = hw * irfft2(G / c_l)
        let hw = (h * w) as f64;
        let mut dx = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for ch in 0..c {
                let re = (i * 2 * c + ch) * plane;
                let im = (i * 2 * c + c + ch) * plane;
                let spec: Vec<Complex<f64>> = (0..plane)
                    .map(|j| Complex::new(g[re + j], g[im + j]) / bin_weight(j % wh, w))
                    .collect();
                dx.extend(irfft2_plane(&spec, h, w).into_iter().map(|v| v * hw));
            }
        }
        vec![Some(dx)]
    })
}

/// Differentiable inverse of [`rfft2_packed`]: `[N,2C,H,W/2+1] -> [N,C,H,W]`.
pub fn irfft2_packed(s: &Tensor, target_width: usize) -> Result<Tensor> {
    let (n, c2, h, wh) = s.dims4()?;
    let w = target_width;
    if c2 % 2 != 0 || wh != half_width(w) {
        return Err(Error::InvalidArgument {
            op: "irfft2",
            msg: format!("packed spectrum {:?} does not match target width {w}", s.shape()),
        });
    }
    check_spatial("irfft2", h, w)?;
    let c = c2 / 2;
    let plane = h * wh;
    let mut out = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        for ch in 0..c {
            let re = (i * c2 + ch) * plane;
            let im = (i * c2 + c + ch) * plane;
            let spec: Vec<Complex<f64>> = (0..plane)
                .map(|j| Complex::new(s.data()[re + j], s.data()[im + j]))
                .collect();
            out.extend(irfft2_plane(&spec, h, w));
        }
    }
    record("irfft2", &[s], vec![n, c, h, w], out, move |g, _| {
        // adjoint: dY = (c_l / hw) * rfft2(g)
        let hw = (h * w) as f64;
        let mut ds = vec![0.0; n * c2 * plane];
        for i in 0..n {
            for ch in 0..c {
                let p = i * c + ch;
                let bins = rfft2_plane(&g[p * h * w..(p + 1) * h * w], h, w);
                let re = (i * c2 + ch) * plane;
                let im = (i * c2 + c + ch) * plane;
                for (j, b) in bins.iter().enumerate() {
                    let k = bin_weight(j % wh, w) / hw;
                    ds[re + j] = b.re * k;
                    ds[im + j] = b.im * k;
                }
            }
        }
        vec![Some(ds)]
    })
}

/// Switches that bypass stages of [`SpectralTransform`]; used to pin the
/// pipeline to the identity in tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpectralBypass {
    pub norm: bool,
    pub activation: bool,
}

/// rfft2 -> pack (C -> 2C) -> 1x1 conv + BN + ReLU -> unpack -> irfft2.
#[derive(Clone, Debug)]
pub struct SpectralTransform {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub bypass: SpectralBypass,
}

impl SpectralTransform {
    pub fn new(channels: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(2 * channels, 2 * channels, 1, rng)?,
            bn: BatchNorm2d::new(2 * channels)?,
            bypass: SpectralBypass::default(),
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, _, _, w) = x.dims4()?;
        let packed = rfft2_packed(x)?;
        let mut y = self.conv.forward(&packed)?;
        if !self.bypass.norm {
            y = self.bn.forward(&y, mode)?;
        }
        if !self.bypass.activation {
            y = y.relu()?;
        }
        irfft2_packed(&y, w)
    }
}

impl Module for SpectralTransform {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.conv.visit(&crate::layers::join(prefix, "conv"), f);
        self.bn.visit(&crate::layers::join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.conv.visit_mut(&crate::layers::join(prefix, "conv"), f);
        self.bn.visit_mut(&crate::layers::join(prefix, "bn"), f);
    }
}

/// Pointwise product of two spectra (used to apply the convolution theorem).
pub fn multiply_spectra(a: &SpectrumBuffer, b: &SpectrumBuffer) -> Result<SpectrumBuffer> {
    if (a.batch, a.channels, a.height, a.half_width) != (b.batch, b.channels, b.height, b.half_width) {
        return Err(Error::InvalidArgument {
            op: "multiply_spectra",
            msg: "spectra have different layouts".into(),
        });
    }
    let data = a
        .data
        .chunks_exact(2)
        .zip(b.data.chunks_exact(2))
        .flat_map(|(x, y)| {
            let p = Complex::new(x[0], x[1]) * Complex::new(y[0], y[1]);
            [p.re, p.im]
        })
        .collect();
    Ok(SpectrumBuffer { data, ..a.clone() })
}
