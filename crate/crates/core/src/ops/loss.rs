use alloc::vec::Vec;

use super::activation::sigmoid;
use super::{needs, val, Contribs, Op};
use crate::error::{Error, Result};
use crate::graph::{Graph, Node, Var};
use crate::scalar::Scalar;
use crate::tensor::Shape;

pub(crate) struct SoftmaxCeCtx<T> {
    pub(crate) logits: Var,
    labels: Vec<usize>,
    weights: Vec<T>,
    probs: Vec<T>,
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Graph<T> {
    /// Element-wise `ln(1 + e^x)`, stable for large `|x|`.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let data = t.data().iter().map(|v| softplus(*v)).collect();
        let shape = t.shape();
        Ok(self.push_op(data, shape, Op::Softplus(x)))
    }

    /// Batch mean of `weight_n * -log softmax(z_n)[label_n]`.
    ///
    /// `logits` has shape `(N, C, 1, 1, 1)` (or any shape with `C` elements
    /// per sample); `weights` holds one weight per sample.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        self.check(logits)?;
        let t = self.value(logits);
        let n = t.shape().n();
        let classes = t.shape().per_sample();
        if labels.len() != n {
            return Err(Error::ShapeMismatch { op: "softmax_cross_entropy", axis: "N", expected: n, found: labels.len() });
        }
        if weights.len() != n {
            return Err(Error::ShapeMismatch { op: "softmax_cross_entropy", axis: "N", expected: n, found: weights.len() });
        }
        if let Some(&label) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let mut probs = Vec::with_capacity(t.numel());
        let mut total = T::zero();
        for i in 0..n {
            let z = &t.data()[i * classes..(i + 1) * classes];
            let max = z.iter().copied().fold(T::neg_infinity(), T::max);
            let sum_exp: T = z.iter().map(|v| (*v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            probs.extend(z.iter().map(|v| (*v - lse).exp()));
            total = total + T::of(weights[i]) * (lse - z[labels[i]]);
        }
        let mean = total / T::of(n as f64);
        let ctx = SoftmaxCeCtx {
            logits,
            labels: labels.to_vec(),
            weights: weights.iter().map(|w| T::of(*w)).collect(),
            probs,
        };
        Ok(self.push_op(alloc::vec![mean], Shape::SCALAR, Op::SoftmaxCe(ctx)))
    }
}

pub(super) fn softplus_backward<T: Scalar>(x: Var, gout: &[T], nodes: &[Node<T>]) -> Contribs<T> {
    if !needs(nodes, x) {
        return Vec::new();
    }
    let g = gout
        .iter()
        .zip(val(nodes, x).data())
        .map(|(g, v)| *g * sigmoid(*v))
        .collect();
    alloc::vec![(x, g)]
}

pub(super) fn softmax_ce_backward<T: Scalar>(c: &SoftmaxCeCtx<T>, gout: &[T], nodes: &[Node<T>]) -> Contribs<T> {
    if !needs(nodes, c.logits) {
        return Vec::new();
    }
    let n = c.labels.len();
    let classes = c.probs.len() / n;
    let scale = gout[0] / T::of(n as f64);
    let mut g = c.probs.clone();
    for i in 0..n {
        let w = c.weights[i] * scale;
        g[i * classes + c.labels[i]] = g[i * classes + c.labels[i]] - T::one();
        for v in &mut g[i * classes..(i + 1) * classes] {
            *v = *v * w;
        }
    }
    alloc::vec![(c.logits, g)]
}

#[cfg(test)]
mod tests {
    use crate::graph::Graph;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn softplus_is_finite_for_huge_inputs() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::new(Shape::new(1, 1, 1, 1, 3), vec![-1000.0, 0.0, 1000.0]).unwrap());
        let y = g.softplus(x).unwrap();
        let v = g.value(y).data().to_vec();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(v[2], 1000.0);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let mut g = Graph::<f64>::new();
        let z = g.variable(Tensor::zeros(Shape::new(2, 3, 1, 1, 1)));
        let l = g.softmax_cross_entropy(z, &[0, 2], &[1.0, 1.0]).unwrap();
        assert!((g.item(l) - 3f64.ln()).abs() < 1e-12);
        g.backward(l).unwrap();
        let gz = g.grad(z).unwrap();
        // (p - onehot) / N
        assert!((gz[0] - (1.0 / 3.0 - 1.0) / 2.0).abs() < 1e-12);
        assert!((gz[1] - (1.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut g = Graph::<f64>::new();
        let z = g.variable(Tensor::zeros(Shape::new(1, 3, 1, 1, 1)));
        assert!(g.softmax_cross_entropy(z, &[3], &[1.0]).is_err());
    }
}
