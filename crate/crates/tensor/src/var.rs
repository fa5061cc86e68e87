//! Reverse-mode automatic differentiation.
//!
//! A [`Var`] is a reference-counted graph node holding a forward value. Ops
//! that consume at least one gradient-tracking input record a backward
//! closure plus references to their inputs; ops over constants record
//! nothing, so inference graphs free intermediates as soon as they drop.
//!
//! Node ids are handed out from a global monotonically increasing counter.
//! Every input of a node is created before the node itself, so sorting the
//! reachable nodes by decreasing id is a reverse topological order.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::elem::Elem;
use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Computes one gradient per parent from `(grad_out, parents, output)`.
/// `None` means the parent receives no gradient from this edge.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[Var<T>], &Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct GradFn<T> {
    op: &'static str,
    parents: Vec<Var<T>>,
    backward: BackwardFn<T>,
}

struct Node<T> {
    id: u64,
    value: Tensor<T>,
    param: Option<ParamId>,
    grad_fn: Option<GradFn<T>>,
}

/// Differentiable handle to a tensor value.
pub struct Var<T>(Rc<Node<T>>);

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Elem> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.op))
            .finish()
    }
}

impl<T: Elem> Var<T> {
    /// A leaf that never receives gradients.
    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(Node { id: next_id(), value, param: None, grad_fn: None }))
    }

    /// A leaf whose gradient is routed to parameter `id` on backward.
    pub fn parameter(value: Tensor<T>, id: ParamId) -> Self {
        Var(Rc::new(Node { id: next_id(), value, param: Some(id), grad_fn: None }))
    }

    /// Records the result of an op. The output must be finite; the backward
    /// closure is kept only when some parent tracks gradients.
    pub fn from_op(
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let grad_fn = parents
            .iter()
            .any(Var::requires_grad)
            .then(|| GradFn { op, parents, backward });
        Ok(Var(Rc::new(Node { id: next_id(), value, param: None, grad_fn })))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.param.is_some() || self.0.grad_fn.is_some()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn param_id(&self) -> Option<ParamId> {
        self.0.param
    }

    /// Detached copy of the value.
    pub fn detach(&self) -> Self {
        Var::constant(self.0.value.clone())
    }

    fn parents(&self) -> &[Var<T>] {
        self.0.grad_fn.as_ref().map(|g| g.parents.as_slice()).unwrap_or(&[])
    }
}

/// Ordered record of the differentiable operations a loss depends on.
pub struct Tape<T> {
    order: Vec<Var<T>>,
}

impl<T: Elem> Tape<T> {
    /// Collects every gradient-tracking node reachable from `root`, in
    /// reverse topological order (root first).
    pub fn record(root: &Var<T>) -> Self {
        let mut seen = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut order = Vec::new();
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            stack.extend(v.parents().iter().cloned());
            order.push(v);
        }
        order.sort_by_key(|v| std::cmp::Reverse(v.id()));
        Tape { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Op names in visiting order (leaves report `"leaf"`).
    pub fn ops(&self) -> Vec<&'static str> {
        self.order
            .iter()
            .map(|v| v.0.grad_fn.as_ref().map(|g| g.op).unwrap_or("leaf"))
            .collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.order.iter().map(Var::id).collect()
    }

    /// Propagates `seed` (the gradient of the root) backward. Returns the
    /// gradient reaching each parameter leaf, summed over all its uses.
    pub fn run(&self, seed: Tensor<T>) -> HashMap<ParamId, Tensor<T>> {
        let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
        let mut out: HashMap<ParamId, Tensor<T>> = HashMap::new();
        if let Some(root) = self.order.first() {
            grads.insert(root.id(), seed);
        }
        for node in &self.order {
            let Some(g) = grads.remove(&node.id()) else { continue };
            if let Some(pid) = node.0.param {
                match out.get_mut(&pid) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.insert(pid, g);
                    }
                }
                continue;
            }
            let Some(gf) = &node.0.grad_fn else { continue };
            let parent_grads = (gf.backward)(&g, &gf.parents, &node.0.value);
            debug_assert_eq!(parent_grads.len(), gf.parents.len(), "op {}", gf.op);
            for (parent, pg) in gf.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.shape(), parent.shape(), "op {}", gf.op);
                match grads.get_mut(&parent.id()) {
                    Some(acc) => acc.add_assign(&pg),
                    None => {
                        grads.insert(parent.id(), pg);
                    }
                }
            }
        }
        out
    }
}

/// Backpropagates a scalar loss and accumulates into the parameter grads.
/// Repeated calls without [`ParamStore::zero_grad`] accumulate.
pub fn backward<T: Elem>(loss: &Var<T>, store: &mut ParamStore<T>) -> Result<()> {
    if loss.value().numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    let tape = Tape::record(loss);
    if tape.is_empty() {
        return Err(TensorError::EmptyTape);
    }
    let seed = Tensor::ones(loss.shape().to_vec());
    for (pid, g) in tape.run(seed) {
        store.accumulate_grad(pid, &g)?;
    }
    Ok(())
}
