use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{AutodiffError, Result};
use crate::ops::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether ops on this thread currently record graph nodes.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables graph recording on the current thread until the guard drops.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    node: Option<Node>,
}

/// Immutable row-major `f64` array, optionally a node in a differentiation graph.
///
/// Cloning is cheap (shared ownership). Node ids increase monotonically with
/// creation, so every recorded node has a larger id than each of its inputs.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl Tensor {
    /// Builds a constant tensor. `shape` extents must be positive and multiply
    /// out to `data.len()`.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(AutodiffError::Shape(format!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self::raw(data, shape.to_vec(), false, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(vec![value], vec![1], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        check_shape(shape)?;
        let numel = shape.iter().product();
        Ok(Self::raw(vec![value; numel], shape.to_vec(), false, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    pub(crate) fn raw(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        node: Option<Node>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            node,
        }))
    }

    /// Result of an op: records a node when grad mode is on and any input
    /// participates in differentiation.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[&Tensor]) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad_flag());
        if track {
            let node = Node {
                op,
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            };
            Self::raw(data, shape, true, Some(node))
        } else {
            Self::raw(data, shape, false, None)
        }
    }

    /// Returns a leaf copy of this tensor that gradients flow into.
    pub fn requires_grad(&self) -> Self {
        Self::raw(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    /// Returns a constant copy cut off from any graph.
    pub fn detach(&self) -> Self {
        if !self.0.requires_grad {
            return self.clone();
        }
        Self::raw(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(AutodiffError::Shape(format!(
                "item() needs one element, tensor has shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    /// Concatenates constant tensors along the leading axis. The result is
    /// detached from any graph.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::Dimension("concat of zero tensors".into()))?;
        let tail = &first.shape()[1..];
        let mut data = Vec::new();
        let mut lead = 0;
        for p in parts {
            if p.ndim() != first.ndim() || &p.shape()[1..] != tail {
                return Err(AutodiffError::Dimension(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape(),
                    p.shape()
                )));
            }
            lead += p.shape()[0];
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Tensor::new(data, &shape)
    }

    /// Rows `start..start+len` along the leading axis, as a constant.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Tensor> {
        let lead = self.shape()[0];
        if len == 0 || start + len > lead {
            return Err(AutodiffError::Dimension(format!(
                "rows {start}..{} out of range for leading extent {lead}",
                start + len
            )));
        }
        let row = self.numel() / lead;
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        Tensor::new(self.data()[start * row..(start + len) * row].to_vec(), &shape)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("id", &self.id())
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad_flag())
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(AutodiffError::Shape(format!(
            "extents must be positive and non-empty, got {shape:?}"
        )));
    }
    Ok(())
}
