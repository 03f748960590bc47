use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::Tensor;
use crate::{Error, Result};

/// Local gradient rule of a recorded operation.
///
/// Called with the upstream gradient of the op's output and a mask telling
/// which inputs are tracked; returns one gradient per input (`None` for
/// inputs that are not tracked or receive no gradient).
pub(crate) type BackwardFn =
    Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

struct Node {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
    numel: usize,
}

pub(crate) struct TapeInner {
    id: u64,
    nodes: Mutex<Vec<Node>>,
}

/// Handle from a tracked tensor into the tape that recorded it.
#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) tape: Arc<TapeInner>,
    pub(crate) index: usize,
}

/// Records operations on tracked tensors for one forward/backward pass.
///
/// Nodes are appended as operations execute, so every input handle points
/// at an earlier node and the record is already in topological order.
/// The tape is dropped after the optimizer update; tensors that still hold
/// a handle keep it alive until they are dropped too.
#[derive(Clone)]
pub struct Tape {
    inner: Arc<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: Arc::new(TapeInner {
                id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
                nodes: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn len(&self) -> usize {
        self.inner.nodes.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register `t` as a gradient-tracking leaf. The returned tensor shares
    /// `t`'s storage.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let index = self.push(Node {
            inputs: Vec::new(),
            backward: None,
            numel: t.numel(),
        });
        Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            node: Some(NodeRef {
                tape: self.inner.clone(),
                index,
            }),
        }
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.inner.nodes.lock().unwrap();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every leaf
    /// reachable from the loss.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(Error::NotScalar(loss.shape.clone()));
        }
        let start = match &loss.node {
            Some(n) if Arc::ptr_eq(&n.tape, &self.inner) => n.index,
            Some(_) => return Err(Error::TapeMismatch),
            None => return Err(Error::Untracked),
        };
        let nodes = self.inner.nodes.lock().unwrap();
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[start] = Some(vec![1.0]);
        let mut leaves = HashMap::new();

        for i in (0..=start).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let Some(backward) = &node.backward else {
                leaves.insert(i, g);
                continue;
            };
            let wants: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &wants);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(j), Some(ig)) = (input, ig) else { continue };
                debug_assert_eq!(ig.len(), nodes[*j].numel);
                match &mut grads[*j] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients {
            tape_id: self.inner.id,
            grads: leaves,
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape_id: u64,
    grads: HashMap<usize, Vec<f64>>,
}

impl Gradients {
    /// Gradient for a watched leaf, or `None` if it did not influence the
    /// loss (or belongs to another tape).
    pub fn get(&self, t: &Tensor) -> Option<Tensor> {
        let node = t.node.as_ref()?;
        if node.tape.id != self.tape_id {
            return None;
        }
        let g = self.grads.get(&node.index)?;
        Some(Tensor::from_parts(t.shape.clone(), g.clone()))
    }

    /// Like [`get`](Self::get) but zeros when the leaf received no gradient.
    pub fn get_or_zeros(&self, t: &Tensor) -> Tensor {
        self.get(t)
            .unwrap_or_else(|| Tensor::from_parts(t.shape.clone(), vec![0.0; t.numel()]))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Record an operation whose forward result is `data`. When no input is
/// tracked the rule is discarded and an untracked tensor is returned.
pub(crate) fn record<F>(
    op: &'static str,
    inputs: &[&Tensor],
    shape: Vec<usize>,
    data: Vec<f64>,
    backward: F,
) -> Result<Tensor>
where
    F: Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
{
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(op));
    }
    let mut tape: Option<&Arc<TapeInner>> = None;
    for t in inputs {
        if let Some(n) = &t.node {
            match tape {
                Some(tp) if !Arc::ptr_eq(tp, &n.tape) => return Err(Error::TapeMismatch),
                _ => tape = Some(&n.tape),
            }
        }
    }
    let Some(tape) = tape else {
        return Ok(Tensor::from_parts(shape, data));
    };
    let node = Node {
        inputs: inputs.iter().map(|t| t.node.as_ref().map(|n| n.index)).collect(),
        backward: Some(Box::new(backward)),
        numel: data.len(),
    };
    let index = {
        let mut nodes = tape.nodes.lock().unwrap();
        nodes.push(node);
        nodes.len() - 1
    };
    Ok(Tensor {
        shape,
        data: Arc::new(data),
        node: Some(NodeRef {
            tape: tape.clone(),
            index,
        }),
    })
}
