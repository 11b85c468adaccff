use std::cell::{Cell, RefCell};
use std::sync::Arc;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adjoint of one recorded op: maps the output gradient to one optional
/// gradient per input. `needs[i]` is false when input `i` is untracked and its
/// gradient may be skipped.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    op: &'static str,
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

type Inspector<T> = Box<dyn FnMut(&str, &Tensor<T>)>;

/// Gradient tape.
///
/// Ops on [`Var`]s append nodes in execution order; [`Graph::backward`]
/// replays them in exact reverse order and consumes the recorded entries.
/// Values that no tracked tensor depends on are never recorded, so inference
/// under [`Graph::inference`] keeps no intermediates alive.
pub struct Graph<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    base: Cell<usize>,
    grad_enabled: bool,
    flops: Cell<u64>,
    corrupt: RefCell<Option<String>>,
    inspector: RefCell<Option<Inspector<T>>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    /// A graph that never records; every result is a constant.
    pub fn inference() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            base: Cell::new(0),
            grad_enabled,
            flops: Cell::new(0),
            corrupt: RefCell::new(None),
            inspector: RefCell::new(None),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Number of live tape entries.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Op names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    /// Multiply-adds ×2 accumulated by conv, linear and matmul ops.
    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    pub(crate) fn add_flops(&self, f: u64) {
        self.flops.set(self.flops.get() + f);
    }

    /// Debug hook: makes the adjoint of every `op` node wrong (scaled by 2).
    pub fn corrupt_adjoint(&self, op: &str) {
        *self.corrupt.borrow_mut() = Some(op.to_string());
    }

    /// Receives tagged intermediates (e.g. attention weights) as they are computed.
    pub fn set_inspector(&self, f: impl FnMut(&str, &Tensor<T>) + 'static) {
        *self.inspector.borrow_mut() = Some(Box::new(f));
    }

    pub fn inspect(&self, tag: &str, value: &Tensor<T>) {
        if let Some(f) = self.inspector.borrow_mut().as_mut() {
            f(tag, value);
        }
    }

    /// Trainable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf_arc(Arc::new(value))
    }

    pub fn leaf_arc(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        if !self.grad_enabled {
            return Var { graph: self, value, node: None };
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = self.base.get() + nodes.len();
        nodes.push(Node { op: "leaf", inputs: Vec::new(), backward: None });
        Var { graph: self, value, node: Some(id) }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var { graph: self, value: Arc::new(value), node: None }
    }

    pub fn constant_arc(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        Var { graph: self, value, node: None }
    }

    fn live(&self, v: &Var<'_, T>) -> Option<usize> {
        v.node.filter(|&id| id >= self.base.get())
    }

    /// Appends an op result. Fails if the forward value is not finite.
    pub(crate) fn record<'g>(
        &'g self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[&Var<'g, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var<'g, T>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let ids: Vec<Option<usize>> = inputs.iter().map(|v| self.live(v)).collect();
        if !self.grad_enabled || ids.iter().all(Option::is_none) {
            return Ok(Var { graph: self, value: Arc::new(value), node: None });
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = self.base.get() + nodes.len();
        nodes.push(Node { op, inputs: ids, backward: Some(Box::new(backward)) });
        Ok(Var { graph: self, value: Arc::new(value), node: Some(id) })
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape: vars created
    /// before this call behave as constants in later ops.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        let Some(loss_id) = self.live(loss) else {
            return Err(Error::Usage("loss does not depend on any tracked tensor".into()));
        };
        let base = self.base.get();
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        self.base.set(base + nodes.len());
        let corrupt = self.corrupt.borrow().clone();

        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss_id - base] = Some(Tensor::ones(loss.value.shape()));
        let mut visited = Vec::new();
        for i in (0..=loss_id - base).rev() {
            let node = &nodes[i];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            visited.push(i + base);
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let mut input_grads = bw(&g, &needs);
            if corrupt.as_deref() == Some(node.op) {
                for ig in input_grads.iter_mut().flatten() {
                    ig.data_mut().iter_mut().for_each(|v| *v *= T::from_f64(2.0));
                }
            }
            for (inp, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(id), Some(ig)) = (inp, ig) else { continue };
                let slot = &mut grads[id - base];
                match slot {
                    Some(acc) => {
                        debug_assert_eq!(acc.shape(), ig.shape(), "gradient shape mismatch in {}", node.op);
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += *b;
                        }
                    }
                    None => *slot = Some(ig),
                }
            }
        }
        // Only leaf gradients are kept.
        for (g, node) in grads.iter_mut().zip(&nodes) {
            if node.backward.is_some() {
                *g = None;
            }
        }
        Ok(Gradients { base, grads, visited })
    }
}

/// Leaf gradients produced by one backward pass.
pub struct Gradients<T> {
    base: usize,
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: &Var<'_, T>) -> Option<&Tensor<T>> {
        let id = v.node?;
        self.grads.get(id.checked_sub(self.base)?)?.as_ref()
    }

    /// Gradient of `v`, or zeros when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: &Var<'_, T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    /// Node ids whose adjoints ran, in the order they ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

/// A tensor value bound to a [`Graph`].
#[derive(Clone)]
pub struct Var<'g, T: Element> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) node: Option<usize>,
}

impl<'g, T: Element> std::fmt::Debug for Var<'g, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("node", &self.node)
            .finish()
    }
}

impl<'g, T: Element> Var<'g, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_arc(&self) -> Arc<Tensor<T>> {
        self.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn rank(&self) -> usize {
        self.value.rank()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.live(self).is_some()
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        Var { graph: self.graph, value: self.value.clone(), node: None }
    }
}
