//! Reverse-mode differentiation by operation recording.
//!
//! A [`Tape`] records every operation whose inputs participate in
//! differentiation. [`Var`] is a cheap handle to a value plus (optionally) the
//! node that produced it. Calling [`Tape::backward`] walks the recorded nodes
//! once, in reverse recording order, and accumulates gradients into the leaves.
//!
//! Values that do not depend on any tracked leaf are never recorded, so an
//! inference pass (or a tape built with [`Tape::no_grad`]) keeps no
//! intermediates alive beyond the `Var`s the caller still holds.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::{Element, Result, Shape, Tensor, TensorError};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

/// A trainable tensor with its gradient accumulator.
///
/// Cloning keeps the id, so a clone must not be registered on the same tape
/// as its original.
#[derive(Clone, Debug)]
pub struct Param<T> {
    id: ParamId,
    value: Arc<Tensor<T>>,
    grad: Option<Tensor<T>>,
    pub requires_grad: bool,
}

impl<T: Element> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Param {
            id: ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)),
            value: Arc::new(value),
            grad: None,
            requires_grad: true,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    /// Mutable access to the value. Copies only if a live tape still shares it.
    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.value)
    }

    pub fn set_value(&mut self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_value",
                lhs: self.shape(),
                rhs: value.shape(),
            });
        }
        self.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &Tensor<T>) -> Result<()> {
        match &mut self.grad {
            Some(acc) => acc.add_assign(g),
            None => {
                if g.shape() != self.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "accumulate_grad",
                        lhs: self.shape(),
                        rhs: g.shape(),
                    });
                }
                self.grad = Some(g.clone());
                Ok(())
            }
        }
    }

    pub(crate) fn shared(&self) -> Arc<Tensor<T>> {
        self.value.clone()
    }
}

/// Gradient rule of one recorded operation.
pub type BackwardFn<T> = Box<dyn Fn(&mut BackwardCtx<'_, T>)>;

/// What a backward rule sees: the upstream gradient, the forward values, and a
/// sink for per-input gradients.
pub struct BackwardCtx<'a, T> {
    grad: &'a Tensor<T>,
    output: &'a Tensor<T>,
    inputs: &'a [Arc<Tensor<T>>],
    wants: Vec<bool>,
    out: Vec<Option<Vec<T>>>,
}

impl<'a, T: Element> BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this op's output.
    pub fn grad(&self) -> &'a Tensor<T> {
        self.grad
    }

    pub fn output(&self) -> &'a Tensor<T> {
        self.output
    }

    pub fn input(&self, i: usize) -> &'a Tensor<T> {
        &self.inputs[i]
    }

    pub fn inputs_len(&self) -> usize {
        self.inputs.len()
    }

    /// Whether input `i` needs a gradient at all.
    pub fn wants(&self, i: usize) -> bool {
        self.wants[i]
    }

    pub fn accumulate(&mut self, i: usize, g: Vec<T>) {
        debug_assert_eq!(g.len(), self.inputs[i].numel());
        match &mut self.out[i] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

struct Node<T> {
    inputs: Vec<Option<usize>>,
    values: Vec<Arc<Tensor<T>>>,
    output: Arc<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
}

/// Per-parameter gradients collected from one tape.
#[derive(Debug, Default, Clone)]
pub struct Gradients<T> {
    map: HashMap<ParamId, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Ordered record of operations for one forward pass.
pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<HashMap<usize, Tensor<T>>>,
    grad_enabled: bool,
    macs: Cell<u64>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(HashMap::new()),
            grad_enabled: true,
            macs: Cell::new(0),
        }
    }

    /// A tape that never records; every `Var` it produces is a plain value.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulate count of every op evaluated through this tape.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub fn count_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        Var {
            tape: self,
            value: Arc::new(t),
            node: None,
        }
    }

    /// A leaf that receives a gradient when the tape records.
    pub fn leaf(&self, t: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(Arc::new(t), None)
    }

    pub fn param(&self, p: &Param<T>) -> Var<'_, T> {
        if p.requires_grad {
            self.push_leaf(p.shared(), Some(p.id()))
        } else {
            Var {
                tape: self,
                value: p.shared(),
                node: None,
            }
        }
    }

    fn push_leaf(&self, value: Arc<Tensor<T>>, param: Option<ParamId>) -> Var<'_, T> {
        if !self.grad_enabled {
            return Var {
                tape: self,
                value,
                node: None,
            };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: Vec::new(),
            values: Vec::new(),
            output: value.clone(),
            backward: None,
            param,
        });
        Var {
            tape: self,
            value,
            node: Some(nodes.len() - 1),
        }
    }

    /// Records an operation. The rule is kept only if some input is tracked.
    pub fn record<F>(&self, inputs: &[&Var<'_, T>], output: Tensor<T>, backward: F) -> Var<'_, T>
    where
        F: Fn(&mut BackwardCtx<'_, T>) + 'static,
    {
        let output = Arc::new(output);
        let tracked = self.grad_enabled && inputs.iter().any(|v| v.node.is_some());
        if !tracked {
            return Var {
                tape: self,
                value: output,
                node: None,
            };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: inputs.iter().map(|v| v.node).collect(),
            values: inputs.iter().map(|v| v.value.clone()).collect(),
            output: output.clone(),
            backward: Some(Box::new(backward)),
            param: None,
        });
        Var {
            tape: self,
            value: output,
            node: Some(nodes.len() - 1),
        }
    }

    /// Propagates d(loss)/d(leaf) into every tracked leaf. Gradients accumulate
    /// across calls until [`Tape::zero_grad`].
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<()> {
        if loss.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.value.shape()));
        }
        let root = loss.node.ok_or(TensorError::Untracked)?;
        let nodes = self.nodes.borrow();
        let mut leaf_grads = self.leaf_grads.borrow_mut();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root + 1];
        grads[root] = Some(vec![T::one()]);
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let Some(rule) = &node.backward else {
                let g = Tensor::new(node.output.shape(), g)?;
                match leaf_grads.get_mut(&id) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        leaf_grads.insert(id, g);
                    }
                }
                continue;
            };
            let g = Tensor::new(node.output.shape(), g)?;
            let mut ctx = BackwardCtx {
                grad: &g,
                output: &node.output,
                inputs: &node.values,
                wants: node.inputs.iter().map(Option::is_some).collect(),
                out: vec![None; node.inputs.len()],
            };
            rule(&mut ctx);
            for (slot, gi) in node.inputs.iter().zip(ctx.out) {
                if let (Some(src), Some(gi)) = (slot, gi) {
                    match &mut grads[*src] {
                        Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                        empty @ None => *empty = Some(gi),
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if it received one.
    pub fn grad(&self, v: &Var<'_, T>) -> Option<Tensor<T>> {
        v.node.and_then(|id| self.leaf_grads.borrow().get(&id).cloned())
    }

    pub fn zero_grad(&self) {
        self.leaf_grads.borrow_mut().clear();
    }

    /// Leaf gradients grouped by parameter (a parameter used twice sums).
    pub fn param_grads(&self) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let leaf_grads = self.leaf_grads.borrow();
        let mut ids: Vec<&usize> = leaf_grads.keys().collect();
        ids.sort_unstable();
        let mut map: HashMap<ParamId, Tensor<T>> = HashMap::new();
        for &id in ids {
            if let Some(pid) = nodes[id].param {
                let g = &leaf_grads[&id];
                match map.get_mut(&pid) {
                    Some(acc) => acc.add_assign(g).expect("same parameter, same shape"),
                    None => {
                        map.insert(pid, g.clone());
                    }
                }
            }
        }
        Gradients { map }
    }
}

/// Handle to a value computed through a [`Tape`].
#[derive(Clone)]
pub struct Var<'t, T: Element> {
    tape: &'t Tape<T>,
    value: Arc<Tensor<T>>,
    node: Option<usize>,
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value).clone()
    }
}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("node", &self.node)
            .finish()
    }
}
