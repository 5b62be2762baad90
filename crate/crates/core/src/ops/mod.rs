//! Differentiable operations recorded on a [`Graph`](crate::graph::Graph).
//!
//! Each submodule adds forward methods to `Graph` and supplies the matching
//! backward rule. Backward rules only read the tape; they return gradient
//! contributions that the graph accumulates.

use alloc::vec::Vec;

use crate::graph::{Node, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

mod activation;
mod conv;
mod elementwise;
mod linear;
mod loss;
mod norm;
mod pool;
mod upsample;

pub use activation::Activation;
pub use conv::{conv3d_output_extent, Conv3dParams};
pub use norm::{BatchNormConfig, NormMode};

pub(crate) type Contribs<T> = Vec<(Var, Vec<T>)>;

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    Concat(Vec<Var>),
    Act(Var, Activation),
    Softplus(Var),
    Conv3d(conv::ConvCtx),
    BatchNorm(norm::BnCtx<T>),
    Linear(linear::LinearCtx),
    UpsampleNearest(Var, [usize; 3]),
    MaxPool(pool::MaxPoolCtx),
    GlobalAvgPool(Var),
    Resample(upsample::ResampleCtx),
    SoftmaxCe(loss::SoftmaxCeCtx<T>),
}

impl<T: Scalar> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => alloc::vec![*a, *b],
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SumPerSample(x)
            | Op::Act(x, _)
            | Op::Softplus(x)
            | Op::UpsampleNearest(x, _)
            | Op::GlobalAvgPool(x) => alloc::vec![*x],
            Op::Concat(xs) => xs.clone(),
            Op::Conv3d(c) => c.inputs(),
            Op::BatchNorm(c) => alloc::vec![c.x, c.gamma, c.beta],
            Op::Linear(c) => c.inputs(),
            Op::MaxPool(c) => alloc::vec![c.x],
            Op::Resample(c) => alloc::vec![c.x],
            Op::SoftmaxCe(c) => alloc::vec![c.logits],
        }
    }
}

#[inline]
pub(crate) fn needs<T: Scalar>(nodes: &[Node<T>], v: Var) -> bool {
    nodes[v.0].value.requires_grad()
}

#[inline]
pub(crate) fn val<T: Scalar>(nodes: &[Node<T>], v: Var) -> &Tensor<T> {
    &nodes[v.0].value
}

pub(crate) fn backward<T: Scalar>(
    op: &Op<T>,
    out: &Tensor<T>,
    gout: &[T],
    nodes: &[Node<T>],
) -> Contribs<T> {
    match op {
        Op::Leaf => Vec::new(),
        Op::Add(..)
        | Op::Sub(..)
        | Op::Mul(..)
        | Op::Scale(..)
        | Op::Sum(_)
        | Op::Mean(_)
        | Op::SumPerSample(_)
        | Op::Concat(_) => elementwise::backward(op, gout, nodes),
        Op::Act(x, kind) => activation::backward(*x, *kind, out, gout, nodes),
        Op::Softplus(x) => loss::softplus_backward(*x, gout, nodes),
        Op::Conv3d(c) => conv::backward(c, gout, nodes),
        Op::BatchNorm(c) => norm::backward(c, gout, nodes),
        Op::Linear(c) => linear::backward(c, gout, nodes),
        Op::UpsampleNearest(x, f) => upsample::nearest_backward(*x, *f, gout, nodes),
        Op::MaxPool(c) => pool::max_backward(c, gout, nodes),
        Op::GlobalAvgPool(x) => pool::gap_backward(*x, gout, nodes),
        Op::Resample(c) => upsample::resample_backward(c, gout, nodes),
        Op::SoftmaxCe(c) => loss::softmax_ce_backward(c, gout, nodes),
    }
}

const AXES: [&str; 5] = ["N", "C", "D", "H", "W"];

pub(crate) fn same_shape(
    op: &'static str,
    a: crate::tensor::Shape,
    b: crate::tensor::Shape,
) -> crate::Result<()> {
    for axis in 0..5 {
        if a.0[axis] != b.0[axis] {
            return Err(crate::Error::ShapeMismatch {
                op,
                axis: AXES[axis],
                expected: a.0[axis],
                found: b.0[axis],
            });
        }
    }
    Ok(())
}
