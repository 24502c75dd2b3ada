//! Dense N-C-H-W tensors that record the operations producing them.
//!
//! Every forward op builds a node holding its inputs and a backward rule.
//! [`Tensor::backward`] walks the resulting DAG in reverse topological order
//! and accumulates gradients additively, so a tensor consumed by several ops
//! receives the sum of its branch gradients.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Extents of a 4-D tensor in batch, channel, height, width order.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Number of elements in one H×W plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub const fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub const fn with_hw(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What a backward rule sees: the gradient flowing into the op's output, the
/// output values, the op inputs, and which inputs need a gradient.
pub(crate) struct BackwardCtx<'a> {
    pub grad: &'a [f64],
    pub output: &'a [f64],
    pub inputs: &'a [Tensor],
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn =
    Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static>;

struct Node {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Shape,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// Reference-counted handle to an immutable tensor value.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph nodes on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Tensor {
    fn leaf(shape: Shape, data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if data.len() != shape.numel() {
            return Err(Error::shape("tensor", shape.numel(), data.len()));
        }
        check_finite("tensor", &data)?;
        Ok(Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node: None,
        })))
    }

    /// A constant tensor (no gradient tracking).
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape, data, false)
    }

    /// A learnable leaf whose gradient is populated by [`Tensor::backward`].
    pub fn parameter(shape: Shape, data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape, data, true)
    }

    pub fn zeros(shape: Shape) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Tensor {
        assert!(value.is_finite(), "Tensor::full requires a finite value");
        Tensor::leaf(shape, vec![value; shape.numel()], false).expect("length matches shape")
    }

    pub fn scalar(value: f64) -> Result<Tensor> {
        Tensor::new(Shape::scalar(), vec![value])
    }

    /// Records the result of an op. The node is kept only when gradient
    /// recording is enabled and some input requires a gradient.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Shape,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Result<Tensor> {
        debug_assert_eq!(data.len(), shape.numel(), "{op} produced wrong length");
        check_finite(op, &data)?;
        let track = grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        let node = track.then(|| Node {
            op,
            inputs,
            backward,
        });
        Ok(Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad: track,
            grad: Mutex::new(None),
            node,
        })))
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Name of the op that produced this tensor, `None` for leaves and
    /// untracked results.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape("item", Shape::scalar(), self.shape()));
        }
        Ok(self.0.data[0])
    }

    /// A constant copy of the values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor(Arc::new(Inner {
            shape: self.shape(),
            data: self.0.data.clone(),
            requires_grad: false,
            grad: Mutex::new(None),
            node: None,
        }))
    }

    /// Value at (n, c, y, x).
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let s = self.shape();
        self.0.data[((n * s.c + c) * s.h + y) * s.w + x]
    }

    /// True when both handles point at the same node.
    pub fn same(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Equal shapes and bit-identical values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape() == other.shape() && self.data().iter().zip(other.data()).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    fn accumulate_grad(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Gradients are added to any
    /// gradient already held, so repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Post-order DFS: inputs precede their consumers.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for input in node.inputs.iter().rev() {
                    if input.requires_grad() && !visited.contains(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }

        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.key()) else {
                continue;
            };
            if let Some(node) = &t.0.node {
                let needs: Vec<bool> = node.inputs.iter().map(Tensor::requires_grad).collect();
                let ctx = BackwardCtx {
                    grad: &g,
                    output: &t.0.data,
                    inputs: &node.inputs,
                    needs: &needs,
                };
                let input_grads = (node.backward)(&ctx);
                debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
                for (input, ig) in node.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(ig.len(), input.numel(), "{} gradient length", node.op);
                    match pending.get_mut(&input.key()) {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.key(), ig);
                        }
                    }
                }
            }
            t.accumulate_grad(g);
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.op_name())
            .finish()
    }
}
