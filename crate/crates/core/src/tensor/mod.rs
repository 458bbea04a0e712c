//! Float64 tensors with a define-by-run reverse-mode tape.
//!
//! A [`Tensor`] is a cheap handle: its values live behind an `Rc`, so cloning
//! and [`Tensor::detach`] alias the same buffer. Tensors produced by an
//! operation on tracked inputs carry a node on a [`Tape`]; everything else is
//! a constant as far as differentiation is concerned.
//!
//! The tape is rebuilt for every forward pass. Each node keeps the
//! intermediates its backward rule needs; [`Tensor::backward`] consumes those
//! rules as it visits them, so the tape's retained-activation count drops
//! back to where it started once every recorded subgraph has been
//! backpropagated.

mod conv;
mod ops;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub(crate) type GradCell = Rc<RefCell<Option<Vec<f64>>>>;

/// Backward rule of a recorded node: receives the output gradient and a mask of
/// which inputs are tracked, returns one optional gradient per input.
pub(crate) type BackwardFn = Box<dyn FnOnce(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Rc<Vec<f64>>,
    grad: GradCell,
    requires_grad: bool,
    node: Option<NodeRef>,
}

#[derive(Clone)]
struct NodeRef {
    tape: Tape,
    id: usize,
}

struct Node {
    op: &'static str,
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
    saved: usize,
    leaf: Option<GradCell>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    retained: usize,
    peak: usize,
}

/// Append-only record of the operations of one forward pass.
#[derive(Clone, Default)]
pub struct Tape(Rc<RefCell<TapeInner>>);

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `t` as a differentiable leaf. Gradients reaching the returned
    /// handle accumulate into `t`'s gradient slot.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let id = {
            let mut inner = self.0.borrow_mut();
            inner.nodes.push(Node {
                op: "leaf",
                inputs: Vec::new(),
                backward: None,
                saved: 0,
                leaf: Some(t.grad.clone()),
            });
            inner.nodes.len() - 1
        };
        Tensor {
            shape: t.shape.clone(),
            values: t.values.clone(),
            grad: t.grad.clone(),
            requires_grad: true,
            node: Some(NodeRef { tape: self.clone(), id }),
        }
    }

    /// Saved intermediates not yet released by a backward pass.
    pub fn retained_activation_count(&self) -> usize {
        self.0.borrow().retained
    }

    /// Highest retained-activation count observed since creation or the last
    /// [`Tape::reset_peak`].
    pub fn peak_retained(&self) -> usize {
        self.0.borrow().peak
    }

    pub fn reset_peak(&self) {
        let mut inner = self.0.borrow_mut();
        inner.peak = inner.retained;
    }

    pub fn len(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Operation names in recording order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.0.borrow().nodes.iter().map(|n| n.op).collect()
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn push(&self, op: &'static str, inputs: Vec<Option<usize>>, saved: usize, backward: BackwardFn) -> usize {
        let mut inner = self.0.borrow_mut();
        inner.nodes.push(Node { op, inputs, backward: Some(backward), saved, leaf: None });
        inner.retained += saved;
        inner.peak = inner.peak.max(inner.retained);
        inner.nodes.len() - 1
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.0.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("retained", &inner.retained)
            .field("peak", &inner.peak)
            .finish()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.values.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("values", &preview)
            .field("requires_grad", &self.requires_grad)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero-sized axis in shape {shape:?}")));
        }
        if numel(&shape) != values.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} holds {} values, got {}", numel(&shape), values.len()),
            ));
        }
        Ok(Self::raw(shape, values))
    }

    pub(crate) fn raw(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), values.len());
        Tensor {
            shape,
            values: Rc::new(values),
            grad: Rc::new(RefCell::new(None)),
            requires_grad: false,
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::raw(shape.to_vec(), vec![v; numel(shape)])
    }

    pub fn scalar(v: f64) -> Self {
        Self::raw(vec![1], vec![v])
    }

    /// A trainable leaf: `requires_grad` is set, gradients accumulate here once
    /// the tensor is watched by a tape.
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let mut t = Self::from_vec(shape, values)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Whether this tensor is linked to a tape node.
    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.grad.borrow_mut() = None;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.values[0]
    }

    /// True if both handles alias one value buffer.
    pub fn shares_values(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.values, &other.values)
    }

    /// Mutable access to the values of an untracked tensor. Copies on write if
    /// the buffer is aliased elsewhere.
    pub fn values_mut(&mut self) -> &mut Vec<f64> {
        assert!(self.node.is_none(), "cannot mutate a tensor recorded on a tape");
        Rc::make_mut(&mut self.values)
    }

    /// Same values, no tape linkage, `requires_grad == false`. The buffer is
    /// shared, not copied.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.clone(),
            grad: Rc::new(RefCell::new(None)),
            requires_grad: false,
            node: None,
        }
    }

    /// Backpropagates from this single-element tensor. Gradients are added to
    /// the slots of every reachable watched leaf; every visited node releases
    /// its saved intermediates.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a single-element loss, got shape {:?}",
                self.shape
            )));
        }
        let node = self
            .node
            .as_ref()
            .ok_or_else(|| Error::Contract("no graph to traverse".into()))?;
        let tape = &node.tape;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; node.id + 1];
        grads[node.id] = Some(vec![1.0]);

        for id in (0..=node.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let (inputs, rule, leaf) = {
                let mut inner = tape.0.borrow_mut();
                let n = &mut inner.nodes[id];
                let rule = n.backward.take();
                let saved = if rule.is_some() { n.saved } else { 0 };
                let out = (n.inputs.clone(), rule, n.leaf.clone());
                inner.retained -= saved;
                out
            };
            if let Some(cell) = leaf {
                let mut slot = cell.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
                continue;
            }
            let rule = rule.ok_or_else(|| {
                Error::Contract(format!(
                    "node {id} was already released by an earlier backward pass"
                ))
            })?;
            let mask: Vec<bool> = inputs.iter().map(Option::is_some).collect();
            let input_grads = rule(&g, &mask);
            for (input, ig) in inputs.into_iter().zip(input_grads) {
                if let (Some(j), Some(ig)) = (input, ig) {
                    match grads[j].as_mut() {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        None => grads[j] = Some(ig),
                    }
                }
            }
        }
        Ok(())
    }
}

/// Records the result of an operation. If no input is on a tape the result is
/// a plain constant and `backward` is dropped unrecorded.
pub(crate) fn record(
    op: &'static str,
    inputs: &[&Tensor],
    shape: Vec<usize>,
    values: Vec<f64>,
    saved: usize,
    backward: impl FnOnce(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
) -> Tensor {
    let tape = inputs.iter().find_map(|t| t.node.as_ref().map(|n| n.tape.clone()));
    let mut out = Tensor::raw(shape, values);
    let Some(tape) = tape else { return out };
    let ids = inputs
        .iter()
        .map(|t| match &t.node {
            Some(n) => {
                assert!(n.tape.same(&tape), "{op}: inputs recorded on different tapes");
                Some(n.id)
            }
            // untracked trainable leaves join the active tape on first use
            None if t.requires_grad => Some(tape.watch(t).node.expect("watched").id),
            None => None,
        })
        .collect();
    let id = tape.push(op, ids, saved, Box::new(backward));
    out.requires_grad = true;
    out.node = Some(NodeRef { tape, id });
    out
}
