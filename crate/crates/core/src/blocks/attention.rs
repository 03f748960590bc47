use crate::layers::{join, Conv2d, Module, ParamKind};
use crate::tensor::{record, Rng, Tensor};
use crate::{Error, Result};

/// Additive attention gate.
///
/// `alpha = sigmoid(psi(relu(W_g g + W_x x)))` is a single-channel map on
/// `x`'s grid; the output is `x` scaled by it. A gating signal on a
/// different grid is resampled to `x`'s grid by nearest neighbour first.
#[derive(Clone, Debug)]
pub struct AttentionGate {
    pub w_g: Conv2d,
    pub w_x: Conv2d,
    pub psi: Conv2d,
}

impl AttentionGate {
    /// Intermediate width is `max(C_x / 2, 1)`.
    pub fn new(c_g: usize, c_x: usize, rng: &mut Rng) -> Result<Self> {
        let c_int = (c_x / 2).max(1);
        Ok(Self {
            w_g: Conv2d::new(c_g, c_int, 1, rng)?,
            w_x: Conv2d::new(c_x, c_int, 1, rng)?,
            psi: Conv2d::new(c_int, 1, 1, rng)?,
        })
    }

    pub fn intermediate_channels(&self) -> usize {
        self.psi.in_channels()
    }

    pub fn forward(&self, g: &Tensor, x: &Tensor) -> Result<Tensor> {
        let alpha = attention_coefficients(self, g, x)?;
        mul_spatial(x, &alpha)
    }
}

impl Module for AttentionGate {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.w_g.visit(&join(prefix, "w_g"), f);
        self.w_x.visit(&join(prefix, "w_x"), f);
        self.psi.visit(&join(prefix, "psi"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.w_g.visit_mut(&join(prefix, "w_g"), f);
        self.w_x.visit_mut(&join(prefix, "w_x"), f);
        self.psi.visit_mut(&join(prefix, "psi"), f);
    }
}

/// The `[N, 1, H, W]` coefficient map `alpha` of `gate` for signal `x`.
pub fn attention_coefficients(gate: &AttentionGate, g: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (ng, _, _, _) = g.dims4()?;
    let (nx, _, h, w) = x.dims4()?;
    if ng != nx {
        return Err(Error::ShapeMismatch {
            op: "attention_gate (batch)",
            lhs: g.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let g = resize_nearest(g, h, w)?;
    let mixed = gate.w_g.forward(&g)?.add(&gate.w_x.forward(x)?)?;
    gate.psi.forward(&mixed.relu()?)?.sigmoid_open()
}

/// Nearest-neighbour resize of the spatial dims; identity when sizes match.
pub fn resize_nearest(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, hs, ws) = x.dims4()?;
    if (hs, ws) == (h, w) {
        return Ok(x.clone());
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidShape(vec![n, c, h, w]));
    }
    let src: Vec<usize> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i * hs / h) * ws + j * ws / w))
        .collect();
    let mut out = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        let plane = &x.data()[p * hs * ws..(p + 1) * hs * ws];
        for (o, &s) in out[p * h * w..(p + 1) * h * w].iter_mut().zip(&src) {
            *o = plane[s];
        }
    }
    record("resize_nearest", &[x], vec![n, c, h, w], out, move |g, _| {
        let mut dx = vec![0.0; n * c * hs * ws];
        for p in 0..n * c {
            let plane = &mut dx[p * hs * ws..(p + 1) * hs * ws];
            for (gv, &s) in g[p * h * w..(p + 1) * h * w].iter().zip(&src) {
                plane[s] += gv;
            }
        }
        vec![Some(dx)]
    })
}

/// `x[n, c, i, j] * mask[n, 0, i, j]`.
fn mul_spatial(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if mask.shape() != [n, 1, h, w] {
        return Err(Error::ShapeMismatch {
            op: "attention mask",
            lhs: x.shape().to_vec(),
            rhs: mask.shape().to_vec(),
        });
    }
    let hw = h * w;
    let xd = x.data.clone();
    let md = mask.data.clone();
    let mut out = vec![0.0; xd.len()];
    for i in 0..n {
        let m = &md[i * hw..(i + 1) * hw];
        for ch in 0..c {
            let off = (i * c + ch) * hw;
            for (j, o) in out[off..off + hw].iter_mut().enumerate() {
                *o = xd[off + j] * m[j];
            }
        }
    }
    record("attention_mask", &[x, mask], vec![n, c, h, w], out, move |g, wants| {
        let dx = wants[0].then(|| {
            let mut dx = vec![0.0; g.len()];
            for i in 0..n {
                for ch in 0..c {
                    let off = (i * c + ch) * hw;
                    for j in 0..hw {
                        dx[off + j] = g[off + j] * md[i * hw + j];
                    }
                }
            }
            dx
        });
        let dm = wants[1].then(|| {
            let mut dm = vec![0.0; n * hw];
            for i in 0..n {
                for ch in 0..c {
                    let off = (i * c + ch) * hw;
                    for j in 0..hw {
                        dm[i * hw + j] += g[off + j] * xd[off + j];
                    }
                }
            }
            dm
        });
        vec![dx, dm]
    })
}
