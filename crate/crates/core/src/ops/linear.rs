use alloc::vec;
use alloc::vec::Vec;

use super::{needs, val, Contribs, Op};
use crate::error::{Error, Result};
use crate::graph::{Graph, Node, Var};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Shape;

pub(crate) struct LinearCtx {
    x: Var,
    w: Var,
    b: Option<Var>,
}

impl LinearCtx {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.w];
        v.extend(self.b);
        v
    }
}

impl<T: Scalar> Graph<T> {
    /// Affine map `x W^T + b` on the per-sample flattening of `x`.
    ///
    /// `w` is `(Fout, F, 1, 1, 1)`, `b` is `(Fout, 1, 1, 1, 1)`; the output
    /// is `(N, Fout, 1, 1, 1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let xs = self.shape(x);
        let ws = self.shape(w);
        let f = xs.per_sample();
        let fout = ws.n();
        if ws.per_sample() != f {
            return Err(Error::ShapeMismatch { op: "linear", axis: "C", expected: ws.per_sample(), found: f });
        }
        if let Some(b) = b {
            self.check(b)?;
            if self.shape(b) != Shape::vector(fout) {
                return Err(Error::ShapeMismatch { op: "linear", axis: "N", expected: fout, found: self.shape(b).numel() });
            }
        }
        let n = xs.n();
        let mut out = vec![T::zero(); n * fout];
        gemm(n, f, fout, self.value(x).data(), false, self.value(w).data(), true, T::zero(), &mut out);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bias).for_each(|(o, bv)| *o = *o + *bv);
            }
        }
        Ok(self.push_op(out, Shape::new(n, fout, 1, 1, 1), Op::Linear(LinearCtx { x, w, b })))
    }
}

pub(super) fn backward<T: Scalar>(c: &LinearCtx, gout: &[T], nodes: &[Node<T>]) -> Contribs<T> {
    let xt = val(nodes, c.x);
    let wt = val(nodes, c.w);
    let n = xt.shape().n();
    let f = xt.shape().per_sample();
    let fout = wt.shape().n();
    let mut out = Vec::new();
    if needs(nodes, c.x) {
        let mut dx = vec![T::zero(); n * f];
        gemm(n, fout, f, gout, false, wt.data(), false, T::zero(), &mut dx);
        out.push((c.x, dx));
    }
    if needs(nodes, c.w) {
        let mut dw = vec![T::zero(); fout * f];
        gemm(fout, n, f, gout, true, xt.data(), false, T::zero(), &mut dw);
        out.push((c.w, dw));
    }
    if let Some(b) = c.b {
        if needs(nodes, b) {
            let mut db = vec![T::zero(); fout];
            for row in gout.chunks(fout) {
                db.iter_mut().zip(row).for_each(|(d, g)| *d = *d + *g);
            }
            out.push((b, db));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use crate::graph::Graph;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn identity_weights_pass_through() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(Shape::new(2, 3, 1, 1, 1), |i| i as f64 - 1.0));
        let w = g.constant(Tensor::from_fn(Shape::new(3, 3, 1, 1, 1), |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let b = g.constant(Tensor::zeros(Shape::vector(3)));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn two_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(Shape::new(1, 2, 1, 1, 1), 1.0));
        let w = g.constant(Tensor::full(Shape::new(1, 2, 1, 1, 1), 1.0));
        let b = g.constant(Tensor::zeros(Shape::vector(1)));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[2.0]);
    }

    #[test]
    fn feature_mismatch_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(Shape::new(1, 3, 1, 1, 1)));
        let w = g.constant(Tensor::zeros(Shape::new(2, 4, 1, 1, 1)));
        assert!(g.linear(x, w, None).is_err());
    }
}
