use alloc::vec;
use alloc::vec::Vec;

use super::{needs, val, Contribs, Op};
use crate::error::{Error, Result};
use crate::graph::{Graph, Node, Var};
use crate::scalar::Scalar;

pub(crate) struct MaxPoolCtx {
    pub(crate) x: Var,
    pub(crate) argmax: Vec<usize>,
}

impl<T: Scalar> Graph<T> {
    /// Non-overlapping max pooling (window = stride). Tails that do not fill
    /// a window are dropped.
    pub fn max_pool3d(&mut self, x: Var, window: [usize; 3]) -> Result<Var> {
        self.check(x)?;
        if window.iter().any(|w| *w == 0) {
            return Err(Error::invalid("max_pool3d", "window must be >= 1"));
        }
        let s = self.shape(x);
        let [d, h, w] = s.spatial();
        let out_ext = [d / window[0], h / window[1], w / window[2]];
        let out_shape = s.with_spatial(out_ext);
        if out_shape.numel() == 0 {
            return Err(Error::EmptyOutput { op: "max_pool3d", shape: out_shape.0 });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(out_shape.numel());
        let mut argmax = Vec::with_capacity(out_shape.numel());
        for nc in 0..s.n() * s.c() {
            let base = nc * d * h * w;
            for oz in 0..out_ext[0] {
                for oy in 0..out_ext[1] {
                    for ox in 0..out_ext[2] {
                        let mut best = T::neg_infinity();
                        let mut best_i = base;
                        for a in 0..window[0] {
                            for b in 0..window[1] {
                                for e in 0..window[2] {
                                    let i = base
                                        + ((oz * window[0] + a) * h + oy * window[1] + b) * w
                                        + ox * window[2]
                                        + e;
                                    // first maximum wins ties
                                    if src[i] > best {
                                        best = src[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        data.push(best);
                        argmax.push(best_i);
                    }
                }
            }
        }
        Ok(self.push_op(data, out_shape, Op::MaxPool(MaxPoolCtx { x, argmax })))
    }

    /// Mean over `(D, H, W)`; output `(N, C, 1, 1, 1)`.
    pub fn global_avg_pool3d(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x);
        let vox = s.voxels();
        if vox == 0 {
            return Err(Error::EmptyOutput { op: "global_avg_pool3d", shape: s.0 });
        }
        let src = self.value(x).data();
        let inv = T::of(1.0 / vox as f64);
        let data = (0..s.n() * s.c())
            .map(|i| src[i * vox..(i + 1) * vox].iter().copied().sum::<T>() * inv)
            .collect();
        Ok(self.push_op(data, s.with_spatial([1, 1, 1]), Op::GlobalAvgPool(x)))
    }
}

pub(super) fn max_backward<T: Scalar>(c: &MaxPoolCtx, gout: &[T], nodes: &[Node<T>]) -> Contribs<T> {
    if !needs(nodes, c.x) {
        return Vec::new();
    }
    let mut g = vec![T::zero(); val(nodes, c.x).numel()];
    for (i, src) in c.argmax.iter().enumerate() {
        g[*src] = g[*src] + gout[i];
    }
    alloc::vec![(c.x, g)]
}

pub(super) fn gap_backward<T: Scalar>(x: Var, gout: &[T], nodes: &[Node<T>]) -> Contribs<T> {
    if !needs(nodes, x) {
        return Vec::new();
    }
    let s = val(nodes, x).shape();
    let vox = s.voxels();
    let inv = T::of(1.0 / vox as f64);
    let g = (0..s.numel()).map(|i| gout[i / vox] * inv).collect();
    alloc::vec![(x, g)]
}
