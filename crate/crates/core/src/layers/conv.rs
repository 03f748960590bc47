use super::{join, kaiming, Module, ParamKind};
use crate::tensor::gemm::gemm;
use crate::tensor::{record, Padding, Rng, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// floor((k-1)/2) before, ceil((k-1)/2) after; output is ceil(H/stride).
    Same,
    Explicit(Padding),
}

impl PadMode {
    fn resolve(self, kh: usize, kw: usize) -> Padding {
        match self {
            PadMode::Same => Padding::same(kh, kw),
            PadMode::Explicit(p) => p,
        }
    }
}

/// 2-D convolution layer (cross-correlation, zero padding).
#[derive(Clone, Debug)]
pub struct Conv2d {
    /// `[C_out, C_in, k_h, k_w]`
    pub weight: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: PadMode,
}

impl Conv2d {
    /// Kaiming-normal weights and zero bias.
    pub fn new(c_in: usize, c_out: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            weight: kaiming(&[c_out, c_in, kernel, kernel], c_in * kernel * kernel, rng)?,
            bias: Tensor::zeros(&[c_out])?,
            stride: 1,
            padding: PadMode::Same,
        })
    }

    pub fn from_weights(weight: Tensor, bias: Tensor, stride: usize, padding: PadMode) -> Result<Self> {
        let conv = Self {
            weight,
            bias,
            stride,
            padding,
        };
        conv.validate()?;
        Ok(conv)
    }

    fn validate(&self) -> Result<()> {
        let [c_out, _, _, _] = self.weight.shape()[..] else {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                msg: format!("weight must be rank 4, got {:?}", self.weight.shape()),
            });
        };
        if self.bias.shape() != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![c_out],
                rhs: self.bias.shape().to_vec(),
            });
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (kh, kw) = match self.weight.shape()[..] {
            [_, _, kh, kw] => (kh, kw),
            _ => (1, 1),
        };
        conv2d(x, &self.weight, &self.bias, self.stride, self.padding.resolve(kh, kw))
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        f(&join(prefix, "weight"), &self.weight, ParamKind::Trainable);
        f(&join(prefix, "bias"), &self.bias, ParamKind::Trainable);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        f(&join(prefix, "weight"), &mut self.weight, ParamKind::Trainable);
        f(&join(prefix, "bias"), &mut self.bias, ParamKind::Trainable);
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: Padding,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1, stride 1, unpadded: the patch matrix is the image itself.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == Padding::default()
    }

    /// Patch matrix `[C_in*kh*kw, Ho*Wo]` for one image.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let (h, w, p) = (self.h as isize, self.w as isize, self.p());
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad.top as isize;
                        let out_row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= h {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad.left as isize;
                            *o = if ix < 0 || ix >= w { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a patch-matrix gradient back onto one image.
    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let (h, w, p) = (self.h as isize, self.w as isize, self.p());
        for c in 0..self.c_in {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad.top as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad.left as isize;
                            if ix >= 0 && ix < w {
                                plane[iy as usize * self.w + ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x [N,C_in,H,W]` with `weight [C_out,C_in,kh,kw]`,
/// implemented by lowering each image to a patch matrix and multiplying.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: Padding) -> Result<Tensor> {
    let (n, c_in, h, w) = x.dims4()?;
    let [c_out, wc_in, kh, kw] = weight.shape()[..] else {
        return Err(Error::InvalidArgument {
            op: "conv2d",
            msg: format!("weight must be rank 4, got {:?}", weight.shape()),
        });
    };
    if wc_in != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv2d channels",
            lhs: x.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if bias.shape() != [c_out] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            lhs: vec![c_out],
            rhs: bias.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidArgument {
            op: "conv2d",
            msg: "stride must be positive".into(),
        });
    }
    let (hp, wp) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
    if kh > hp || kw > wp {
        return Err(Error::InvalidArgument {
            op: "conv2d",
            msg: format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}"),
        });
    }
    let g = Geometry {
        c_in,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        ho: (hp - kh) / stride + 1,
        wo: (wp - kw) / stride + 1,
    };
    let (k, p) = (g.k(), g.p());
    let xd = x.data.clone();
    let wd = weight.data.clone();
    let bd = bias.data.clone();

    let mut out = vec![0.0; n * c_out * p];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
    for i in 0..n {
        let xi = &xd[i * c_in * h * w..(i + 1) * c_in * h * w];
        let cols: &[f64] = if g.is_pointwise() {
            xi
        } else {
            g.im2col(xi, &mut col);
            &col
        };
        let yi = &mut out[i * c_out * p..(i + 1) * c_out * p];
        for (o, row) in yi.chunks_mut(p).enumerate() {
            row.fill(bd[o]);
        }
        gemm(c_out, k, p, &wd, false, cols, false, yi, true);
    }

    record("conv2d", &[x, weight, bias], vec![n, c_out, g.ho, g.wo], out, move |gy, wants| {
        let mut dx = wants[0].then(|| vec![0.0; n * c_in * h * w]);
        let mut dw = wants[1].then(|| vec![0.0; c_out * k]);
        let db = wants[2].then(|| {
            let mut db = vec![0.0; c_out];
            for i in 0..n {
                for (o, d) in db.iter_mut().enumerate() {
                    *d += gy[(i * c_out + o) * p..(i * c_out + o + 1) * p].iter().sum::<f64>();
                }
            }
            db
        });
        let mut col = vec![0.0; k * p];
        let mut dcol = vec![0.0; k * p];
        for i in 0..n {
            let gi = &gy[i * c_out * p..(i + 1) * c_out * p];
            if let Some(dw) = dw.as_mut() {
                let xi = &xd[i * c_in * h * w..(i + 1) * c_in * h * w];
                let cols: &[f64] = if g.is_pointwise() {
                    xi
                } else {
                    g.im2col(xi, &mut col);
                    &col
                };
                gemm(c_out, p, k, gi, false, cols, true, dw, true);
            }
            if let Some(dx) = dx.as_mut() {
                let dxi = &mut dx[i * c_in * h * w..(i + 1) * c_in * h * w];
                if g.is_pointwise() {
                    gemm(k, c_out, p, &wd, true, gi, false, dxi, false);
                } else {
                    gemm(k, c_out, p, &wd, true, gi, false, &mut dcol, false);
                    g.col2im(&dcol, dxi);
                }
            }
        }
        vec![dx, dw, db]
    })
}
