//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles in
//! execution order. Because nodes are appended only after their inputs, the
//! node list is already a topological order and [`Graph::backward`] is a
//! single reverse sweep.
//!
//! A graph is confined to one thread; tensors it produces may be shared freely.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Maps the gradient of a node's output to gradients of its parents
/// (`None` for parents that receive nothing).
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    tracked: bool,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    params: Vec<Tensor<T>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
    grad_enabled: bool,
    track_kinks: bool,
    kinks: Cell<u64>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// Graph without parameters; inputs created by [`Graph::input`] are tracked.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: Vec::new(),
            param_nodes: RefCell::new(HashMap::new()),
            grad_enabled: true,
            track_kinks: false,
            kinks: Cell::new(FNV_OFFSET),
        }
    }

    /// Graph that can differentiate with respect to the parameters of `store`.
    pub fn with_params(store: &ParamStore<T>) -> Self {
        Graph { params: store.values(), ..Self::new() }
    }

    /// Graph that records values only. No backward closures are kept.
    pub fn inference(store: &ParamStore<T>) -> Self {
        Graph { params: store.values(), grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Makes piecewise operations (ReLU, max, clamped log) fold the branch
    /// they take for every element into [`Graph::kink_signature`].
    pub fn with_kink_tracking(mut self) -> Self {
        self.track_kinks = true;
        self
    }

    pub(crate) fn tracks_kinks(&self) -> bool {
        self.track_kinks
    }

    /// Hash of all branch decisions taken so far. Two evaluations with equal
    /// signatures stayed on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        self.kinks.get()
    }

    pub(crate) fn note_branches(&self, branches: impl Iterator<Item = u64>) {
        let mut h = self.kinks.get();
        for b in branches {
            h = (h ^ b).wrapping_mul(FNV_PRIME);
        }
        self.kinks.set(h);
    }

    fn push_node(&self, value: Tensor<T>, parents: Vec<usize>, backward: Option<BackwardFn<T>>, tracked: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, backward, tracked });
        nodes.len() - 1
    }

    /// Untracked leaf.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = self.push_node(value, Vec::new(), None, false);
        Var { graph: self, id }
    }

    /// Leaf whose gradient is collected by [`Graph::backward`].
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = self.push_node(value, Vec::new(), None, self.grad_enabled);
        Var { graph: self, id }
    }

    /// Leaf for a stored parameter. Each parameter is recorded once per graph.
    pub fn param(&self, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.param_nodes.borrow().get(&id) {
            return Var { graph: self, id: node };
        }
        let value = self.params[id.0].clone();
        let var = self.input(value);
        self.param_nodes.borrow_mut().insert(id, var.id);
        var
    }

    /// Records the result of an operation. Fails if `value` is not finite.
    pub(crate) fn record(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: impl Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var<'_, T>> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let parent_ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let tracked = self.grad_enabled && {
            let nodes = self.nodes.borrow();
            parent_ids.iter().any(|&p| nodes[p].tracked)
        };
        let backward: Option<BackwardFn<T>> = if tracked { Some(Box::new(backward)) } else { None };
        let id = self.push_node(value, if tracked { parent_ids } else { Vec::new() }, backward, tracked);
        Ok(Var { graph: self, id })
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from the scalar `output`. Consumes the recorded closures,
    /// so a graph can be differentiated once.
    pub fn backward(&self, output: Var<'_, T>) -> Result<Gradients<T>> {
        let mut nodes = self.nodes.borrow_mut();
        let out_value = &nodes[output.id].value;
        if out_value.numel() != 1 {
            return Err(TensorError::shape("backward", &[out_value.shape()]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.id + 1];
        grads[output.id] = Some(Tensor::ones(out_value.shape()));
        for id in (0..=output.id).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &mut nodes[id];
            if let Some(backward) = node.backward.take() {
                let parent_grads = backward(&grad);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                let parents = node.parents.clone();
                for (parent, pg) in parents.into_iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    match &mut grads[parent] {
                        Some(existing) => existing.accumulate(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            if node.parents.is_empty() && node.tracked {
                grads[id] = Some(grad);
            }
        }
        let param_nodes = self.param_nodes.borrow().clone();
        Ok(Gradients { grads, param_nodes })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    param_nodes: HashMap<ParamId, usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a tracked leaf (input or parameter); `None` if the output
    /// does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.param_nodes.get(&id).and_then(|&node| self.grads.get(node)).and_then(|g| g.as_ref())
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn value(&self) -> Tensor<T> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn is_tracked(&self) -> bool {
        self.graph.nodes.borrow()[self.id].tracked
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> T {
        self.graph.nodes.borrow()[self.id].value.item()
    }
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}
