use alloc::vec;
use alloc::vec::Vec;

use super::{needs, val, Contribs, Op};
use crate::error::{Error, Result};
use crate::graph::{Graph, Node, Var};
use crate::resample::{separable3, separable3_transpose, upsample_taps, AxisTaps, InterpMode};
use crate::scalar::Scalar;
use crate::tensor::Shape;

pub(crate) struct ResampleCtx {
    pub(crate) x: Var,
    taps: [AxisTaps; 3],
    in_shape: Shape,
}

impl<T: Scalar> Graph<T> {
    /// Nearest-neighbour upsampling by integer factors (block replication).
    pub fn upsample_nearest3d(&mut self, x: Var, factors: [usize; 3]) -> Result<Var> {
        self.check(x)?;
        if factors.iter().any(|f| *f == 0) {
            return Err(Error::invalid("upsample_nearest3d", "factors must be >= 1"));
        }
        let s = self.shape(x);
        let [d, h, w] = s.spatial();
        let [fd, fh, fw] = factors;
        let out_shape = s.with_spatial([d * fd, h * fh, w * fw]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(out_shape.numel());
        for nc in 0..s.n() * s.c() {
            let plane = &src[nc * d * h * w..(nc + 1) * d * h * w];
            for z in 0..d * fd {
                for y in 0..h * fh {
                    let row = &plane[((z / fd) * h + y / fh) * w..((z / fd) * h + y / fh + 1) * w];
                    for v in row {
                        for _ in 0..fw {
                            data.push(*v);
                        }
                    }
                }
            }
        }
        Ok(self.push_op(data, out_shape, Op::UpsampleNearest(x, factors)))
    }

    /// Origin-aligned trilinear upsampling by integer factors with edge
    /// clamping (the same grid convention as the interpolation baselines).
    pub fn trilinear_upsample(&mut self, x: Var, factors: [usize; 3]) -> Result<Var> {
        self.check(x)?;
        if factors.iter().any(|f| *f == 0) {
            return Err(Error::invalid("trilinear_upsample", "factors must be >= 1"));
        }
        let s = self.shape(x);
        if s.numel() == 0 {
            return Err(Error::EmptyOutput { op: "trilinear_upsample", shape: s.0 });
        }
        let ext = s.spatial();
        let taps = [
            upsample_taps(ext[0], factors[0], InterpMode::Trilinear),
            upsample_taps(ext[1], factors[1], InterpMode::Trilinear),
            upsample_taps(ext[2], factors[2], InterpMode::Trilinear),
        ];
        let (data, out_ext) = separable3(self.value(x).data(), s.n() * s.c(), ext, &taps);
        let ctx = ResampleCtx { x, taps, in_shape: s };
        Ok(self.push_op(data, s.with_spatial(out_ext), Op::Resample(ctx)))
    }
}

pub(super) fn nearest_backward<T: Scalar>(x: Var, factors: [usize; 3], gout: &[T], nodes: &[Node<T>]) -> Contribs<T> {
    if !needs(nodes, x) {
        return Vec::new();
    }
    let s = val(nodes, x).shape();
    let [d, h, w] = s.spatial();
    let [fd, fh, fw] = factors;
    let (oh, ow) = (h * fh, w * fw);
    let mut g = vec![T::zero(); s.numel()];
    for nc in 0..s.n() * s.c() {
        let src = &gout[nc * d * fd * oh * ow..(nc + 1) * d * fd * oh * ow];
        let dst = &mut g[nc * d * h * w..(nc + 1) * d * h * w];
        for z in 0..d * fd {
            for y in 0..oh {
                let row = &src[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                let base = ((z / fd) * h + y / fh) * w;
                for (xo, v) in row.iter().enumerate() {
                    dst[base + xo / fw] = dst[base + xo / fw] + *v;
                }
            }
        }
    }
    alloc::vec![(x, g)]
}

pub(super) fn resample_backward<T: Scalar>(c: &ResampleCtx, gout: &[T], nodes: &[Node<T>]) -> Contribs<T> {
    if !needs(nodes, c.x) {
        return Vec::new();
    }
    let s = c.in_shape;
    let g = separable3_transpose(gout, s.n() * s.c(), s.spatial(), &c.taps);
    alloc::vec![(c.x, g)]
}
