//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its output value and a backward
//! rule. Inputs are always recorded before the operations that consume them,
//! so a single reverse sweep over the node list visits each operation once in
//! reverse topological order.

mod conv;
mod norm;
mod ops;

pub use conv::{conv2d_output_extent, conv_transpose2d_output_extent};
pub use norm::{BatchNormMode, BatchStats};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// Receives the input values, the output value and the gradient flowing into
/// the output; returns one gradient per input (entries for inputs with
/// `needs[i] == false` may be `None`).
pub trait Backward<T: Scalar> {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
}

/// Records operations for one forward pass and replays them backwards once.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, mut value: Tensor<T>) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value.with_grad())
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut value: Tensor<T>) -> Var {
        value.requires_grad = false;
        self.leaf(value)
    }

    /// Appends the result of an operation.
    pub fn record(
        &mut self,
        mut value: Tensor<T>,
        inputs: &[Var],
        rule: Box<dyn Backward<T>>,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            rule: requires_grad.then_some(rule),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// The value with its gradient attached, if any.
    pub fn tensor(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Back-propagates from a scalar `loss`, populating the gradient of every
    /// tensor on the tape that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("loss is not on this tape".into()));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;
        if self.nodes[loss.0].value.requires_grad {
            self.nodes[loss.0].value.grad = Some(vec![T::one()]);
        }

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let (Some(rule), Some(grad)) = (node.rule.as_ref(), node.value.grad.as_ref()) else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &before[v.0].value).collect();
            let needs: Vec<bool> = inputs.iter().map(|t| t.requires_grad).collect();
            let grads = rule.backward(&inputs, &node.value, grad, &needs);
            debug_assert_eq!(grads.len(), node.inputs.len(), "{}", rule.name());
            let input_ids = node.inputs.clone();
            for (v, g) in input_ids.into_iter().zip(grads) {
                let Some(g) = g else { continue };
                let target = &mut before[v.0].value;
                if !target.requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), target.numel());
                match &mut target.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        for node in &mut self.nodes {
            if node.value.requires_grad && node.value.grad.is_none() {
                node.value.grad = Some(vec![T::zero(); node.value.numel()]);
            }
        }
        Ok(())
    }
}

pub(crate) fn same_shape<T: Scalar>(
    tape: &Tape<T>,
    op: &'static str,
    a: Var,
    b: Var,
) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    Ok(())
}
