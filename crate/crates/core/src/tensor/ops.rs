use std::sync::Arc;

use super::gemm::gemm;
use super::{record, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

/// Right-hand operand of an elementwise op.
#[derive(Clone, Copy, Debug)]
pub enum Rhs<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

impl<'a> From<&'a Tensor> for Rhs<'a> {
    fn from(t: &'a Tensor) -> Self {
        Rhs::Tensor(t)
    }
}

impl From<f64> for Rhs<'_> {
    fn from(v: f64) -> Self {
        Rhs::Scalar(v)
    }
}

/// Per-side pixel counts for [`Tensor::pad2d`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// "Same" padding for a `kh x kw` kernel: floor((k-1)/2) before,
    /// ceil((k-1)/2) after.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self {
            top: (kh - 1) / 2,
            bottom: kh / 2,
            left: (kw - 1) / 2,
            right: kw / 2,
        }
    }
}

/// How the right operand's elements map onto the left operand's.
#[derive(Clone, Copy)]
enum Bcast {
    Same,
    One,
    Channel { c: usize, hw: usize },
}

impl Bcast {
    fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Bcast::Same);
        }
        if b.iter().product::<usize>() == 1 {
            return Ok(Bcast::One);
        }
        if let ([_, c, h, w], [1, bc, 1, 1]) = (a, b) {
            if c == bc {
                return Ok(Bcast::Channel { c: *c, hw: h * w });
            }
        }
        Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }

    #[inline]
    fn idx(self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::One => 0,
            Bcast::Channel { c, hw } => (i / hw) % c,
        }
    }

    /// Sum a full-size gradient down to the right operand's size.
    fn reduce(self, g: Vec<f64>, b_len: usize) -> Vec<f64> {
        if let Bcast::Same = self {
            return g;
        }
        let mut out = vec![0.0; b_len];
        for (i, v) in g.iter().enumerate() {
            out[self.idx(i)] += v;
        }
        out
    }
}

fn apply(kind: BinaryOp, a: f64, b: f64) -> f64 {
    match kind {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
        BinaryOp::Max => a.max(b),
    }
}

/// Upstream gradient split into (d/da, d/db) for one element.
fn local_grads(kind: BinaryOp, a: f64, b: f64, g: f64) -> (f64, f64) {
    match kind {
        BinaryOp::Add => (g, g),
        BinaryOp::Sub => (g, -g),
        BinaryOp::Mul => (g * b, g * a),
        BinaryOp::Div => (g / b, -g * a / (b * b)),
        // ties route to the right operand, so relu(0) has zero gradient
        BinaryOp::Max => {
            if a > b {
                (g, 0.0)
            } else {
                (0.0, g)
            }
        }
    }
}

fn op_name(kind: BinaryOp) -> &'static str {
    match kind {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
        BinaryOp::Max => "max",
    }
}

impl Tensor {
    /// Elementwise `a (op) b`. `b` may be a scalar, a same-shape tensor, a
    /// single-element tensor, or a `[1,C,1,1]` tensor against `[N,C,H,W]`.
    pub fn elementwise<'a>(&self, rhs: impl Into<Rhs<'a>>, kind: BinaryOp) -> Result<Tensor> {
        let name = op_name(kind);
        match rhs.into() {
            Rhs::Scalar(s) => {
                if kind == BinaryOp::Div && s == 0.0 {
                    return Err(Error::DivisionByZero(name));
                }
                let a = self.data.clone();
                let out = a.iter().map(|&x| apply(kind, x, s)).collect();
                record(name, &[self], self.shape.clone(), out, move |g, _| {
                    let da = g
                        .iter()
                        .zip(a.iter())
                        .map(|(&g, &x)| local_grads(kind, x, s, g).0)
                        .collect();
                    vec![Some(da)]
                })
            }
            Rhs::Tensor(b) => {
                let bc = Bcast::resolve(name, &self.shape, &b.shape)?;
                if kind == BinaryOp::Div && b.data.iter().any(|&v| v == 0.0) {
                    return Err(Error::DivisionByZero(name));
                }
                let a = self.data.clone();
                let bd = b.data.clone();
                let out = a
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| apply(kind, x, bd[bc.idx(i)]))
                    .collect();
                record(name, &[self, b], self.shape.clone(), out, move |g, wants| {
                    let mut da = vec![0.0; g.len()];
                    let mut db = vec![0.0; g.len()];
                    for (i, &gi) in g.iter().enumerate() {
                        let (x, y) = local_grads(kind, a[i], bd[bc.idx(i)], gi);
                        da[i] = x;
                        db[i] = y;
                    }
                    vec![
                        wants[0].then_some(da),
                        wants[1].then(|| bc.reduce(db, bd.len())),
                    ]
                })
            }
        }
    }

    pub fn add<'a>(&self, rhs: impl Into<Rhs<'a>>) -> Result<Tensor> {
        self.elementwise(rhs, BinaryOp::Add)
    }

    pub fn sub<'a>(&self, rhs: impl Into<Rhs<'a>>) -> Result<Tensor> {
        self.elementwise(rhs, BinaryOp::Sub)
    }

    pub fn mul<'a>(&self, rhs: impl Into<Rhs<'a>>) -> Result<Tensor> {
        self.elementwise(rhs, BinaryOp::Mul)
    }

    pub fn div<'a>(&self, rhs: impl Into<Rhs<'a>>) -> Result<Tensor> {
        self.elementwise(rhs, BinaryOp::Div)
    }

    pub fn maximum<'a>(&self, rhs: impl Into<Rhs<'a>>) -> Result<Tensor> {
        self.elementwise(rhs, BinaryOp::Max)
    }

    pub fn relu(&self) -> Result<Tensor> {
        let x = self.data.clone();
        let out = x.iter().map(|&v| v.max(0.0)).collect();
        record("relu", &[self], self.shape.clone(), out, move |g, _| {
            let dx = g
                .iter()
                .zip(x.iter())
                .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                .collect();
            vec![Some(dx)]
        })
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let out: Vec<f64> = self.data.iter().map(|&v| sigmoid(v)).collect();
        let y = Arc::new(out.clone());
        record("sigmoid", &[self], self.shape.clone(), out, move |g, _| {
            let dx = g.iter().zip(y.iter()).map(|(&g, &s)| g * s * (1.0 - s)).collect();
            vec![Some(dx)]
        })
    }

    /// Sigmoid kept strictly inside (0, 1). In f64 the plain sigmoid rounds
    /// to exactly 1 once its argument passes ~36.7; clamping moves values by
    /// at most 2^-53 and keeps probabilities and gate coefficients open.
    pub fn sigmoid_open(&self) -> Result<Tensor> {
        const HI: f64 = 1.0 - f64::EPSILON / 2.0;
        let out: Vec<f64> = self.data.iter().map(|&v| sigmoid(v).clamp(f64::MIN_POSITIVE, HI)).collect();
        let y = Arc::new(out.clone());
        record("sigmoid_open", &[self], self.shape.clone(), out, move |g, _| {
            let dx = g.iter().zip(y.iter()).map(|(&g, &s)| g * s * (1.0 - s)).collect();
            vec![Some(dx)]
        })
    }

    /// Matrix product of `[M,K]` and `[K,P]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k, k2, p) = match (&self.shape[..], &rhs.shape[..]) {
            ([m, k], [k2, p]) => (*m, *k, *k2, *p),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: self.shape.clone(),
                    rhs: rhs.shape.clone(),
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let a = self.data.clone();
        let b = rhs.data.clone();
        let mut out = vec![0.0; m * p];
        gemm(m, k, p, &a, false, &b, false, &mut out, false);
        record("matmul", &[self, rhs], vec![m, p], out, move |g, wants| {
            // dA = dY * B^T, dB = A^T * dY
            let da = wants[0].then(|| {
                let mut da = vec![0.0; m * k];
                gemm(m, p, k, g, false, &b, true, &mut da, false);
                da
            });
            let db = wants[1].then(|| {
                let mut db = vec![0.0; k * p];
                gemm(k, m, p, &a, true, g, false, &mut db, false);
                db
            });
            vec![da, db]
        })
    }

    /// Pad the two spatial axes of an `[N,C,H,W]` tensor with `value`.
    pub fn pad2d(&self, pad: Padding, value: f64) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        let (ho, wo) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
        let mut out = vec![value; n * c * ho * wo];
        for plane in 0..n * c {
            for y in 0..h {
                let src = &self.data[(plane * h + y) * w..][..w];
                let dst = (plane * ho + y + pad.top) * wo + pad.left;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
        record("pad2d", &[self], vec![n, c, ho, wo], out, move |g, _| {
            let mut dx = vec![0.0; n * c * h * w];
            for plane in 0..n * c {
                for y in 0..h {
                    let src = (plane * ho + y + pad.top) * wo + pad.left;
                    dx[(plane * h + y) * w..][..w].copy_from_slice(&g[src..src + w]);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Sum or mean over `axes` (all axes when `None`). Reduced axes are
    /// dropped unless `keep_dims`; a full reduction yields shape `[1]`.
    pub fn reduce(&self, kind: ReduceOp, axes: Option<&[usize]>, keep_dims: bool) -> Result<Tensor> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        match axes {
            None => reduced.fill(true),
            Some(axes) => {
                for &a in axes {
                    if a >= rank {
                        return Err(Error::InvalidAxis { axis: a, rank });
                    }
                    reduced[a] = true;
                }
            }
        }
        let kept_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .map(|(&d, &r)| if r { 1 } else { d })
            .collect();
        let out_len: usize = kept_shape.iter().product();
        let count = (self.numel() / out_len) as f64;
        let map = Arc::new(reduce_index_map(&self.shape, &kept_shape));

        let mut out = vec![0.0; out_len];
        for (i, v) in self.data.iter().enumerate() {
            out[map[i]] += v;
        }
        let scale = match kind {
            ReduceOp::Sum => 1.0,
            ReduceOp::Mean => 1.0 / count,
        };
        if kind == ReduceOp::Mean {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let shape = if keep_dims {
            kept_shape
        } else {
            let s: Vec<usize> = self
                .shape
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(&d, _)| d)
                .collect();
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        };
        let in_len = self.numel();
        record("reduce", &[self], shape, out, move |g, _| {
            let dx = (0..in_len).map(|i| g[map[i]] * scale).collect();
            vec![Some(dx)]
        })
    }

    pub fn sum(&self) -> Result<Tensor> {
        self.reduce(ReduceOp::Sum, None, false)
    }

    pub fn mean(&self) -> Result<Tensor> {
        self.reduce(ReduceOp::Mean, None, false)
    }

    /// Same data viewed with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.contains(&0) || shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        record("reshape", &[self], shape.to_vec(), self.to_vec(), |g, _| {
            vec![Some(g.to_vec())]
        })
    }
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// For every flat input index, the flat index of the reduced output it
/// accumulates into. `kept` is `shape` with reduced axes set to 1.
fn reduce_index_map(shape: &[usize], kept: &[usize]) -> Vec<usize> {
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut coords = vec![0usize; shape.len()];
    for _ in 0..total {
        let mut o = 0;
        for (d, &k) in kept.iter().enumerate() {
            o = o * k + if k == 1 { 0 } else { coords[d] };
        }
        map.push(o);
        for d in (0..shape.len()).rev() {
            coords[d] += 1;
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    map
}
