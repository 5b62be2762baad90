//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution
//! order, so the node list is topologically sorted by construction. Each
//! node owns its output [`Tensor`]; [`Graph::backward`] walks the list in
//! reverse once and leaves `dloss/dnode` in every node's gradient slot.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{self, Activation, Op};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert an input tensor. It participates in differentiation when its
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.zero_grad();
        self.push_node(tensor, Op::Leaf)
    }

    /// Insert a tensor that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Insert a tensor that receives a gradient.
    pub fn variable(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Gradient of the last backward pass, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Scalar value of a `1x1x1x1x1` node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    /// First node (in execution order) holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.nodes
            .iter()
            .position(|n| !n.value.is_finite())
            .map(Var)
    }

    /// Hash of every branch taken by piecewise-linear ops (ReLU sign
    /// patterns, max-pool winners). Two evaluations with equal signatures
    /// lie on the same linear piece.
    pub(crate) fn branch_signature(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| h = (h ^ v).wrapping_mul(PRIME);
        for node in &self.nodes {
            match &node.op {
                Op::Act(x, Activation::Relu | Activation::LeakyRelu(_)) => {
                    for v in self.nodes[x.0].value.data() {
                        mix((*v > T::zero()) as u64);
                    }
                }
                Op::MaxPool(ctx) => ctx.argmax.iter().for_each(|a| mix(*a as u64)),
                _ => {}
            }
        }
        h
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownVar(v.0))
        }
    }

    pub(crate) fn push_op(&mut self, data: Vec<T>, shape: Shape, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.requires_grad(*v));
        let tensor = Tensor::new(shape, data)
            .expect("ops produce data matching their output shape")
            .with_requires_grad(requires_grad);
        self.push_node(tensor, op)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagate from the scalar `loss`.
    ///
    /// Afterwards every node with `requires_grad` holds a gradient; leaves
    /// the loss does not depend on hold zeros. A graph supports exactly one
    /// backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(Error::NonScalarLoss { shape: shape.0 });
        }
        self.backward_done = true;
        if self.nodes[loss.0].value.requires_grad() {
            *self.nodes[loss.0].value.grad_mut() = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            let Some(gout) = self.nodes[i].value.grad_mut().take() else {
                continue;
            };
            let contributions = {
                let node = &self.nodes[i];
                ops::backward(&node.op, &node.value, &gout, &self.nodes)
            };
            *self.nodes[i].value.grad_mut() = Some(gout);
            for (v, g) in contributions {
                let target = &mut self.nodes[v.0].value;
                debug_assert_eq!(g.len(), target.numel());
                match target.grad_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        for node in &mut self.nodes {
            if node.value.requires_grad() && node.value.grad().is_none() {
                let n = node.value.numel();
                *node.value.grad_mut() = Some(vec![T::zero(); n]);
            }
        }
        Ok(())
    }
}
