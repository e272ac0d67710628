//! Minimal dense tensor engine with reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]: every operation appends an output buffer plus a
//! closure that knows how to push gradients back to its operands. Calling
//! [`Tape::backward`] on a scalar walks the tape once in reverse. Storage is
//! row-major `f32`; there is no broadcasting — every primitive checks shapes
//! explicitly and fails fast on mismatch.
//!
//! A tape is single-writer and not `Send`. Concurrent inference is done by
//! giving each thread its own tape over a shared frozen parameter store.

mod adam;
mod ops;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};

use crate::error::{Error, Result};

/// Handle to a tensor on a tape.
pub type TensorId = usize;

/// Dense row-major value buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub data: Vec<f32>,
    pub shape: Vec<usize>,
}

impl Buffer {
    pub fn new(data: Vec<f32>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Buffer { data, shape }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Buffer {
            data: vec![0.0; n],
            shape,
        }
    }

    pub fn scalar(v: f32) -> Self {
        Buffer {
            data: vec![v],
            shape: vec![1],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Interpret as a matrix: 2-D shapes as-is, 1-D as a single row.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("rows_cols on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

/// Gradient slots for every tape position, allocated lazily on first touch.
pub(crate) struct GradStore {
    slots: Vec<Option<Vec<f32>>>,
}

impl GradStore {
    fn new(n: usize) -> Self {
        GradStore {
            slots: (0..n).map(|_| None).collect(),
        }
    }

    /// Mutable gradient buffer for `id`, zero-initialized on first access.
    pub(crate) fn accum(&mut self, id: TensorId, numel: usize) -> &mut [f32] {
        self.slots[id].get_or_insert_with(|| vec![0.0; numel])
    }
}

type BackwardFn = Box<dyn Fn(&[Buffer], &[f32], &mut GradStore)>;

enum Node {
    Leaf { requires_grad: bool },
    Op { inputs: Vec<TensorId>, backward: BackwardFn },
}

/// Ordered record of executed primitives. Construction order is the
/// topological order of the forward computation: an op's inputs always have
/// smaller ids than its output.
pub struct Tape {
    bufs: Vec<Buffer>,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            bufs: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }

    /// Register an input tensor.
    pub fn leaf(&mut self, data: Vec<f32>, shape: Vec<usize>, requires_grad: bool) -> TensorId {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "leaf data length must match shape"
        );
        self.bufs.push(Buffer::new(data, shape));
        self.nodes.push(Node::Leaf { requires_grad });
        self.bufs.len() - 1
    }

    /// Constant leaf filled with one value.
    pub fn constant(&mut self, value: f32, shape: Vec<usize>) -> TensorId {
        let n = shape.iter().product();
        self.leaf(vec![value; n], shape, false)
    }

    pub fn value(&self, id: TensorId) -> &Buffer {
        &self.bufs[id]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.bufs[id].shape
    }

    pub fn data(&self, id: TensorId) -> &[f32] {
        &self.bufs[id].data
    }

    /// Gradient of the last `backward` loss w.r.t. `id`, if it was reached.
    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        match &self.nodes[id] {
            Node::Leaf { requires_grad } => *requires_grad,
            Node::Op { .. } => true,
        }
    }

    /// Operand ids of the node that produced `id` (empty for leaves).
    pub fn inputs_of(&self, id: TensorId) -> &[TensorId] {
        match &self.nodes[id] {
            Node::Leaf { .. } => &[],
            Node::Op { inputs, .. } => inputs,
        }
    }

    fn next_id(&self) -> TensorId {
        self.bufs.len()
    }

    fn push(&mut self, buf: Buffer, inputs: Vec<TensorId>, backward: BackwardFn) -> TensorId {
        debug_assert!(inputs.iter().all(|&i| i < self.bufs.len()));
        self.bufs.push(buf);
        self.nodes.push(Node::Op { inputs, backward });
        self.bufs.len() - 1
    }

    /// Reverse pass from a scalar loss. Populates gradients for every tensor
    /// reachable from `loss`; each tape record is visited exactly once.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let buf = &self.bufs[loss];
        if !buf.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: buf.shape.clone(),
            });
        }
        let mut store = GradStore::new(self.bufs.len());
        store.accum(loss, 1)[0] = 1.0;
        for id in (0..=loss).rev() {
            let gout = match &store.slots[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            if let Node::Op { backward, .. } = &self.nodes[id] {
                backward(&self.bufs, &gout, &mut store);
            }
        }
        self.grads = store.slots;
        Ok(())
    }
}
