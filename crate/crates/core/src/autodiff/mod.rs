//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in execution
//! order, so the node list is topologically sorted by construction. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! into the leaves that were registered with `requires_grad`.
//!
//! A graph built with [`Graph::inference`] evaluates the same operations but
//! records no gradient requirements; `backward` on it is an error.

mod grad;
mod ops;

use crate::error::TensorError;
use crate::tensor::kernels::ConvGeom;
use crate::tensor::{Scalar, Tensor};

pub use ops::{BinaryKind, ReduceKind, UpsampleMode};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is broadcast against the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// `b` has one element.
    Scalar,
    /// `b`'s shape is a trailing suffix of `a`'s shape.
    Trailing,
}

#[derive(Debug)]
pub(crate) enum Op<T: Scalar> {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    AddScalar(Var),
    MulScalar(Var, T),
    Matmul(Var, Var),
    Transpose(Var),
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    LeakyRelu(Var, T),
    Upsample(Var, UpsampleMode),
    AvgPool2(Var),
    Reduce {
        kind: ReduceKind,
        x: Var,
        axes: Vec<usize>,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        scale: Option<Var>,
        shift: Option<Var>,
    },
    InjectNoise {
        x: Var,
        strength: Var,
        noise: Tensor<T>,
    },
    PixelNorm {
        x: Var,
        inv_rms: Vec<T>,
    },
    MinibatchStddev {
        x: Var,
        group: usize,
    },
    Sigmoid(Var),
    LogSigmoid(Var),
    Reshape(Var),
    RepeatBatch(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    CropCenter(Var),
    PadCenter(Var),
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Binary { a, b, .. } => vec![*a, *b],
            Matmul(a, b) => vec![*a, *b],
            Conv2d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            ChannelAffine { x, scale, shift } => {
                let mut v = vec![*x];
                v.extend(scale);
                v.extend(shift);
                v
            }
            InjectNoise { x, strength, .. } => vec![*x, *strength],
            AddScalar(x) | MulScalar(x, _) | Transpose(x) | LeakyRelu(x, _) | Upsample(x, _)
            | AvgPool2(x) | Sigmoid(x) | LogSigmoid(x) | Reshape(x) | RepeatBatch(x)
            | CropCenter(x) | PadCenter(x) => vec![*x],
            Reduce { x, .. }
            | InstanceNorm { x, .. }
            | PixelNorm { x, .. }
            | MinibatchStddev { x, .. }
            | Narrow { x, .. } => vec![*x],
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. See the module documentation.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    tracing: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// A graph that traces gradients.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            tracing: true,
        }
    }

    /// A graph that only evaluates values.
    pub fn inference() -> Self {
        Self {
            tracing: false,
            ..Self::new()
        }
    }

    pub fn is_tracing(&self) -> bool {
        self.tracing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input tensor. Gradients are collected for it only when
    /// `requires_grad` is set and the graph is tracing.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.tracing;
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Clears every accumulated leaf gradient.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = self.tracing && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.push(value, op, requires_grad)
    }

    /// Back-propagates from a scalar `loss`, adding into the leaf gradients.
    /// Gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if !self.tracing {
            return Err(TensorError::NotTracing);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(Tensor::ones(loss_value.shape().to_vec()));
        for i in (0..=loss.0).rev() {
            let Some(g_out) = pending[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                accumulate(&mut self.grads[i], g_out);
                continue;
            }
            let contributions = grad::backward_op(self, i, &g_out);
            for (input, g) in contributions {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut pending[input.0], g);
                }
            }
        }
        Ok(())
    }

    pub(crate) fn node_value(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    pub(crate) fn node_op(&self, i: usize) -> &Op<T> {
        &self.nodes[i].op
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), g.shape());
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests;
