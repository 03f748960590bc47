//! Dense row-major `f64` tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value. Operations on tensors that were
//! registered with a [`Tape`] (directly via [`Tape::watch`] or transitively)
//! are recorded; everything else runs untracked with no bookkeeping.

pub(crate) mod gemm;
mod ops;
mod rng;
mod tape;

use std::fmt;
use std::sync::Arc;

pub use ops::{BinaryOp, Padding, ReduceOp, Rhs};
pub(crate) use ops::sigmoid;
pub use rng::Rng;
pub use tape::{Gradients, Tape};
pub(crate) use tape::{record, NodeRef};

use crate::{Error, Result};

#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Arc<Vec<f64>>,
    pub(crate) node: Option<NodeRef>,
}

/// Initial contents for [`Tensor::create`].
#[derive(Debug)]
pub enum Fill<'a> {
    Zeros,
    Ones,
    Constant(f64),
    Normal { mean: f64, std: f64, rng: &'a mut Rng },
    Uniform { lo: f64, hi: f64, rng: &'a mut Rng },
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 4 || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

impl Tensor {
    pub fn create(shape: &[usize], fill: Fill<'_>) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        let data = match fill {
            Fill::Zeros => vec![0.0; n],
            Fill::Ones => vec![1.0; n],
            Fill::Constant(c) => vec![c; n],
            Fill::Normal { mean, std, rng } => (0..n).map(|_| rng.normal(mean, std)).collect(),
            Fill::Uniform { lo, hi, rng } => (0..n).map(|_| rng.uniform(lo, hi)).collect(),
        };
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument {
                op: "new",
                msg: format!("shape {shape:?} needs {n} values, got {}", data.len()),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Fill::Zeros)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Fill::Ones)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::create(shape, Fill::Constant(value))
    }

    pub fn randn(shape: &[usize], mean: f64, std: f64, rng: &mut Rng) -> Result<Self> {
        Self::create(shape, Fill::Normal { mean, std, rng })
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Copy of this tensor with no tape handle.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::InvalidArgument {
                op: "dims4",
                msg: format!("expected rank-4 [N,C,H,W], got {:?}", self.shape),
            }),
        }
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for axis {i}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Untracked tensor of the same shape holding `data`.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(data.len(), self.numel());
        Tensor::from_parts(self.shape.clone(), data)
    }

    /// Bitwise equality of shape and values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest absolute elementwise difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad());
        if self.numel() <= 16 {
            s.field("data", &self.data);
        }
        s.finish()
    }
}
