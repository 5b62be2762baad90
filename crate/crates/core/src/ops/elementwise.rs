use alloc::vec;
use alloc::vec::Vec;

use super::{needs, same_shape, val, Contribs, Op};
use crate::error::{Error, Result};
use crate::graph::{Graph, Node, Var};
use crate::scalar::Scalar;
use crate::tensor::Shape;

impl<T: Scalar> Graph<T> {
    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Vec<T>, Shape)> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta.shape(), tb.shape())?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok((data, ta.shape()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (d, s) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push_op(d, s, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (d, s) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push_op(d, s, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (d, s) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push_op(d, s, Op::Mul(a, b)))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check(x)?;
        let c = T::of(factor);
        let t = self.value(x);
        let data = t.data().iter().map(|v| *v * c).collect();
        let shape = t.shape();
        Ok(self.push_op(data, shape, Op::Scale(x, c)))
    }

    /// Sum of all elements, as a `1x1x1x1x1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s: T = self.value(x).data().iter().copied().sum();
        Ok(self.push_op(vec![s], Shape::SCALAR, Op::Sum(x)))
    }

    /// Mean of all elements, as a `1x1x1x1x1` tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::EmptyOutput { op: "mean", shape: t.shape().0 });
        }
        let s: T = t.data().iter().copied().sum();
        let m = s / T::of(t.numel() as f64);
        Ok(self.push_op(vec![m], Shape::SCALAR, Op::Mean(x)))
    }

    /// Per-sample sum over `(C, D, H, W)`; output shape `(N, 1, 1, 1, 1)`.
    pub fn sum_per_sample(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let n = t.shape().n();
        let per = t.shape().per_sample();
        let data = (0..n)
            .map(|i| t.data()[i * per..(i + 1) * per].iter().copied().sum())
            .collect();
        Ok(self.push_op(data, Shape::new(n, 1, 1, 1, 1), Op::SumPerSample(x)))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "empty input list"))?;
        for v in xs {
            self.check(*v)?;
        }
        let base = self.shape(first);
        let mut channels = 0;
        for v in xs {
            let s = self.shape(*v);
            for (axis, name) in [(0, "N"), (2, "D"), (3, "H"), (4, "W")] {
                if s.0[axis] != base.0[axis] {
                    return Err(Error::ShapeMismatch {
                        op: "concat_channels",
                        axis: name,
                        expected: base.0[axis],
                        found: s.0[axis],
                    });
                }
            }
            channels += s.c();
        }
        let out_shape = base.with_channels(channels);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..base.n() {
            for v in xs {
                let t = self.value(*v);
                let per = t.shape().per_sample();
                data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
            }
        }
        debug_assert_eq!(data.len(), out_shape.numel());
        Ok(self.push_op(data, out_shape, Op::Concat(xs.to_vec())))
    }
}

pub(super) fn backward<T: Scalar>(op: &Op<T>, gout: &[T], nodes: &[Node<T>]) -> Contribs<T> {
    let mut out = Vec::new();
    match op {
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if needs(nodes, v) {
                    out.push((v, gout.to_vec()));
                }
            }
        }
        Op::Sub(a, b) => {
            if needs(nodes, *a) {
                out.push((*a, gout.to_vec()));
            }
            if needs(nodes, *b) {
                out.push((*b, gout.iter().map(|g| -*g).collect()));
            }
        }
        Op::Mul(a, b) => {
            if needs(nodes, *a) {
                let other = val(nodes, *b).data();
                out.push((*a, gout.iter().zip(other).map(|(g, y)| *g * *y).collect()));
            }
            if needs(nodes, *b) {
                let other = val(nodes, *a).data();
                out.push((*b, gout.iter().zip(other).map(|(g, y)| *g * *y).collect()));
            }
        }
        Op::Scale(x, c) => {
            if needs(nodes, *x) {
                out.push((*x, gout.iter().map(|g| *g * *c).collect()));
            }
        }
        Op::Sum(x) => {
            if needs(nodes, *x) {
                out.push((*x, vec![gout[0]; val(nodes, *x).numel()]));
            }
        }
        Op::Mean(x) => {
            if needs(nodes, *x) {
                let n = val(nodes, *x).numel();
                out.push((*x, vec![gout[0] / T::of(n as f64); n]));
            }
        }
        Op::SumPerSample(x) => {
            if needs(nodes, *x) {
                let t = val(nodes, *x);
                let per = t.shape().per_sample();
                let g = (0..t.numel()).map(|i| gout[i / per]).collect();
                out.push((*x, g));
            }
        }
        Op::Concat(xs) => {
            let total_c: usize = xs.iter().map(|v| val(nodes, *v).shape().c()).sum();
            let first = val(nodes, xs[0]).shape();
            let vox = first.voxels();
            let mut c_off = 0;
            for v in xs {
                let s = val(nodes, *v).shape();
                if needs(nodes, *v) {
                    let mut g = Vec::with_capacity(s.numel());
                    for n in 0..s.n() {
                        let start = (n * total_c + c_off) * vox;
                        g.extend_from_slice(&gout[start..start + s.c() * vox]);
                    }
                    out.push((*v, g));
                }
                c_off += s.c();
            }
        }
        _ => unreachable!("not an elementwise op"),
    }
    out
}

#[cfg(test)]
mod tests {
    use crate::graph::Graph;
    use crate::tensor::{Shape, Tensor};
    use crate::Error;

    #[test]
    fn add_zeros_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(Shape::new(1, 2, 1, 2, 2), |i| i as f64 * 0.3));
        let z = g.constant(Tensor::zeros(Shape::new(1, 2, 1, 2, 2)));
        let y = g.add(x, z).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn sum_of_two_samples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(Shape::new(2, 1, 1, 1, 1), vec![3.0, 4.0]).unwrap());
        let s = g.sum(x).unwrap();
        assert_eq!(g.item(s), 7.0);
    }

    #[test]
    fn mismatched_shapes_name_the_axis() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 3, 4)));
        let b = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 5, 4)));
        let err = g.add(a, b).unwrap_err();
        assert_eq!(
            err,
            Error::ShapeMismatch { op: "add", axis: "H", expected: 3, found: 5 }
        );
    }

    #[test]
    fn concat_splits_gradient_by_channel_range() {
        let mut g = Graph::<f64>::new();
        let a = g.variable(Tensor::from_fn(Shape::new(2, 2, 1, 1, 2), |i| i as f64));
        let b = g.variable(Tensor::from_fn(Shape::new(2, 3, 1, 1, 2), |i| 100.0 + i as f64));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(c), Shape::new(2, 5, 1, 1, 2));
        // sample 1, channel 2 is b's sample 1 channel 0
        assert_eq!(g.value(c).at([1, 2, 0, 0, 1]), 100.0 + 7.0);
        let w = g.constant(Tensor::from_fn(g.shape(c), |i| i as f64));
        let p = g.mul(c, w).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        // d/d a[n, ch, k] = index of (n, ch, k) in the concatenated layout
        let ga = g.grad(a).unwrap();
        assert_eq!(ga, &[0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0]);
        let gb = g.grad(b).unwrap();
        assert_eq!(&gb[..6], &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(&gb[6..], &[14.0, 15.0, 16.0, 17.0, 18.0, 19.0]);
    }

    #[test]
    fn sum_per_sample_reduces_everything_but_batch() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::from_fn(Shape::new(2, 2, 1, 1, 2), |i| i as f64));
        let s = g.sum_per_sample(x).unwrap();
        assert_eq!(g.value(s).data(), &[6.0, 22.0]);
        let w = g.constant(Tensor::new(Shape::new(2, 1, 1, 1, 1), vec![2.0, -1.0]).unwrap());
        let p = g.mul(s, w).unwrap();
        let t = g.sum(p).unwrap();
        g.backward(t).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0, 2.0, -1.0, -1.0, -1.0, -1.0]);
    }
}
