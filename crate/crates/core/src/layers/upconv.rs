use super::{join, kaiming, Module, ParamKind};
use crate::tensor::gemm::gemm;
use crate::tensor::{record, Rng, Tensor};
use crate::{Error, Result};

/// Transposed 2x2 convolution with stride 2: doubles H and W.
#[derive(Clone, Debug)]
pub struct UpConv2x {
    /// `[C_out, C_in, 2, 2]`
    pub weight: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
}

impl UpConv2x {
    pub fn new(c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            weight: kaiming(&[c_out, c_in, 2, 2], c_in * 4, rng)?,
            bias: Tensor::zeros(&[c_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        upconv2x(x, &self.weight, &self.bias)
    }
}

impl Module for UpConv2x {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        f(&join(prefix, "weight"), &self.weight, ParamKind::Trainable);
        f(&join(prefix, "bias"), &self.bias, ParamKind::Trainable);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        f(&join(prefix, "weight"), &mut self.weight, ParamKind::Trainable);
        f(&join(prefix, "bias"), &mut self.bias, ParamKind::Trainable);
    }
}

/// `out[n,o,2i+a,2j+b] = bias[o] + sum_c weight[o,c,a,b] * x[n,c,i,j]`
pub fn upconv2x(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c_in, h, w) = x.dims4()?;
    let c_out = match weight.shape()[..] {
        [co, ci, 2, 2] if ci == c_in => co,
        _ => {
            return Err(Error::ShapeMismatch {
                op: "upconv2x weight (expects [C_out, C_in, 2, 2])",
                lhs: x.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            })
        }
    };
    if bias.shape() != [c_out] {
        return Err(Error::ShapeMismatch {
            op: "upconv2x bias",
            lhs: vec![c_out],
            rhs: bias.shape().to_vec(),
        });
    }
    let p = h * w;
    let rows = c_out * 4;
    // [(o,a,b), c] layout so one product covers all four kernel taps
    let mut wm = vec![0.0; rows * c_in];
    for o in 0..c_out {
        for c in 0..c_in {
            for t in 0..4 {
                wm[(o * 4 + t) * c_in + c] = weight.data()[(o * c_in + c) * 4 + t];
            }
        }
    }
    let (ho, wo) = (2 * h, 2 * w);
    let xd = x.data.clone();
    let bd = bias.data.clone();
    let mut out = vec![0.0; n * c_out * ho * wo];
    let mut taps = vec![0.0; rows * p];
    for i in 0..n {
        gemm(rows, c_in, p, &wm, false, &xd[i * c_in * p..(i + 1) * c_in * p], false, &mut taps, false);
        let yi = &mut out[i * c_out * ho * wo..(i + 1) * c_out * ho * wo];
        for o in 0..c_out {
            for t in 0..4 {
                let (a, b) = (t / 2, t % 2);
                let row = &taps[(o * 4 + t) * p..(o * 4 + t + 1) * p];
                for y in 0..h {
                    for xx in 0..w {
                        yi[(o * ho + 2 * y + a) * wo + 2 * xx + b] = row[y * w + xx] + bd[o];
                    }
                }
            }
        }
    }
    let wm = std::sync::Arc::new(wm);
    record("upconv2x", &[x, weight, bias], vec![n, c_out, ho, wo], out, move |g, wants| {
        let mut dx = wants[0].then(|| vec![0.0; n * c_in * p]);
        let mut dwm = wants[1].then(|| vec![0.0; rows * c_in]);
        let mut db = wants[2].then(|| vec![0.0; c_out]);
        let mut gtaps = vec![0.0; rows * p];
        for i in 0..n {
            let gi = &g[i * c_out * ho * wo..(i + 1) * c_out * ho * wo];
            for o in 0..c_out {
                for t in 0..4 {
                    let (a, b) = (t / 2, t % 2);
                    let row = &mut gtaps[(o * 4 + t) * p..(o * 4 + t + 1) * p];
                    for y in 0..h {
                        for xx in 0..w {
                            row[y * w + xx] = gi[(o * ho + 2 * y + a) * wo + 2 * xx + b];
                        }
                    }
                }
                if let Some(db) = db.as_mut() {
                    db[o] += gi[o * ho * wo..(o + 1) * ho * wo].iter().sum::<f64>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                gemm(c_in, rows, p, &wm, true, &gtaps, false, &mut dx[i * c_in * p..(i + 1) * c_in * p], false);
            }
            if let Some(dwm) = dwm.as_mut() {
                gemm(rows, p, c_in, &gtaps, false, &xd[i * c_in * p..(i + 1) * c_in * p], true, dwm, true);
            }
        }
        let dw = dwm.map(|dwm| {
            let mut dw = vec![0.0; rows * c_in];
            for o in 0..c_out {
                for c in 0..c_in {
                    for t in 0..4 {
                        dw[(o * c_in + c) * 4 + t] = dwm[(o * 4 + t) * c_in + c];
                    }
                }
            }
            dw
        });
        vec![dx, dw, db]
    })
}
