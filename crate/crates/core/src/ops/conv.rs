//! 3D cross-correlation via im2col + GEMM.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{needs, val, Contribs, Op};
use crate::error::{Error, Result};
use crate::graph::{Graph, Node, Var};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dParams {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dParams {
    pub const fn unit() -> Self {
        Conv3dParams { stride: [1, 1, 1], padding: [0, 0, 0] }
    }

    /// Stride 1 with padding that preserves extents for an odd kernel.
    pub const fn same(kernel: usize) -> Self {
        let p = kernel / 2;
        Conv3dParams { stride: [1, 1, 1], padding: [p, p, p] }
    }
}

/// `floor((in + 2 pad - k) / stride) + 1` per axis, or `None` when the
/// kernel does not fit.
pub fn conv3d_output_extent(input: [usize; 3], kernel: [usize; 3], p: Conv3dParams) -> Option<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let padded = input[a] + 2 * p.padding[a];
        if kernel[a] > padded || p.stride[a] == 0 {
            return None;
        }
        out[a] = (padded - kernel[a]) / p.stride[a] + 1;
    }
    Some(out)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    n: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    out: [usize; 3],
}

impl Geom {
    fn col_rows(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }
    fn out_vox(&self) -> usize {
        self.out.iter().product()
    }
    fn in_vox(&self) -> usize {
        self.input.iter().product()
    }
    /// 1x1x1 kernel, unit stride, no padding: the input already is the column matrix.
    fn pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
}

pub(crate) struct ConvCtx {
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    geom: Geom,
}

impl ConvCtx {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.input, self.kernel];
        v.extend(self.bias);
        v
    }
}

/// Walks every (column row, output voxel) pair with its input offset, if
/// the tap lands inside the unpadded input.
#[inline]
fn for_each_tap(g: &Geom, mut f: impl FnMut(usize, Option<usize>)) {
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.out;
    let [kd, kh, kw] = g.kernel;
    let mut idx = 0;
    for c in 0..g.cin {
        let cbase = c * d * h * w;
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    for oz in 0..od {
                        let iz = (oz * g.stride[0] + a) as isize - g.pad[0] as isize;
                        let zin = iz >= 0 && (iz as usize) < d;
                        for oy in 0..oh {
                            let iy = (oy * g.stride[1] + b) as isize - g.pad[1] as isize;
                            if !zin || iy < 0 || iy as usize >= h {
                                for _ in 0..ow {
                                    f(idx, None);
                                    idx += 1;
                                }
                                continue;
                            }
                            let base = cbase + (iz as usize * h + iy as usize) * w;
                            for ox in 0..ow {
                                let ix = (ox * g.stride[2] + e) as isize - g.pad[2] as isize;
                                if ix >= 0 && (ix as usize) < w {
                                    f(idx, Some(base + ix as usize));
                                } else {
                                    f(idx, None);
                                }
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, col: &mut [T]) {
    for_each_tap(g, |i, src| {
        col[i] = match src {
            Some(s) => x[s],
            None => T::zero(),
        }
    });
}

fn col2im_add<T: Scalar>(col: &[T], g: &Geom, dx: &mut [T]) {
    for_each_tap(g, |i, dst| {
        if let Some(s) = dst {
            dx[s] = dx[s] + col[i];
        }
    });
}

impl<T: Scalar> Graph<T> {
    /// 3D cross-correlation (no kernel flip) with optional per-channel bias.
    ///
    /// `input` is `(N, Cin, D, H, W)`, `kernel` is `(Cout, Cin, kd, kh, kw)`
    /// and `bias`, when present, is `(Cout, 1, 1, 1, 1)`.
    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Option<Var>, p: Conv3dParams) -> Result<Var> {
        self.check(input)?;
        self.check(kernel)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let xs = self.shape(input);
        let ks = self.shape(kernel);
        if ks.0[1] != xs.c() {
            return Err(Error::ShapeMismatch { op: "conv3d", axis: "C", expected: ks.0[1], found: xs.c() });
        }
        if p.stride.iter().any(|s| *s == 0) {
            return Err(Error::invalid("conv3d", "stride components must be >= 1"));
        }
        let kext = [ks.0[2], ks.0[3], ks.0[4]];
        for (a, name) in [(0, "D"), (1, "H"), (2, "W")] {
            let padded = xs.spatial()[a] + 2 * p.padding[a];
            if kext[a] > padded {
                return Err(Error::ShapeMismatch { op: "conv3d", axis: name, expected: kext[a], found: padded });
            }
        }
        let cout = ks.n();
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != Shape::vector(cout) {
                return Err(Error::ShapeMismatch { op: "conv3d", axis: "N", expected: cout, found: bs.numel() });
            }
        }
        let out_ext = conv3d_output_extent(xs.spatial(), kext, p).expect("checked above");
        let out_shape = Shape::new(xs.n(), cout, out_ext[0], out_ext[1], out_ext[2]);
        if out_shape.numel() == 0 {
            return Err(Error::EmptyOutput { op: "conv3d", shape: out_shape.0 });
        }
        let geom = Geom {
            n: xs.n(),
            cin: xs.c(),
            cout,
            input: xs.spatial(),
            kernel: kext,
            stride: p.stride,
            pad: p.padding,
            out: out_ext,
        };
        let data = conv_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        Ok(self.push_op(data, out_shape, Op::Conv3d(ConvCtx { input, kernel, bias, geom })))
    }
}

fn conv_forward<T: Scalar>(x: &[T], k: &[T], bias: Option<&[T]>, g: &Geom) -> Vec<T> {
    let rows = g.col_rows();
    let p = g.out_vox();
    let in_per = g.cin * g.in_vox();
    let out_per = g.cout * p;
    let mut out = vec![T::zero(); g.n * out_per];
    let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); rows * p] };
    for n in 0..g.n {
        let xn = &x[n * in_per..(n + 1) * in_per];
        let on = &mut out[n * out_per..(n + 1) * out_per];
        let cols: &[T] = if g.pointwise() {
            xn
        } else {
            im2col(xn, g, &mut col);
            &col
        };
        gemm(g.cout, rows, p, k, false, cols, false, T::zero(), on);
        if let Some(b) = bias {
            for (co, bv) in b.iter().enumerate() {
                on[co * p..(co + 1) * p].iter_mut().for_each(|v| *v = *v + *bv);
            }
        }
    }
    out
}

pub(super) fn backward<T: Scalar>(c: &ConvCtx, gout: &[T], nodes: &[Node<T>]) -> Contribs<T> {
    let g = &c.geom;
    let x = val(nodes, c.input).data();
    let k = val(nodes, c.kernel).data();
    let rows = g.col_rows();
    let p = g.out_vox();
    let in_per = g.cin * g.in_vox();
    let out_per = g.cout * p;
    let need_x = needs(nodes, c.input);
    let need_k = needs(nodes, c.kernel);

    let mut dx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut dk = if need_k { vec![T::zero(); k.len()] } else { Vec::new() };
    let mut col = if need_k && !g.pointwise() { vec![T::zero(); rows * p] } else { Vec::new() };
    let mut dcol = if need_x { vec![T::zero(); rows * p] } else { Vec::new() };

    for n in 0..g.n {
        let gn = &gout[n * out_per..(n + 1) * out_per];
        if need_k {
            let xn = &x[n * in_per..(n + 1) * in_per];
            let cols: &[T] = if g.pointwise() {
                xn
            } else {
                im2col(xn, g, &mut col);
                &col
            };
            gemm(g.cout, p, rows, gn, false, cols, true, T::one(), &mut dk);
        }
        if need_x {
            gemm(rows, g.cout, p, k, true, gn, false, T::zero(), &mut dcol);
            let dxn = &mut dx[n * in_per..(n + 1) * in_per];
            if g.pointwise() {
                dxn.iter_mut().zip(&dcol).for_each(|(a, b)| *a = *a + *b);
            } else {
                col2im_add(&dcol, g, dxn);
            }
        }
    }

    let mut out = Vec::new();
    if need_x {
        out.push((c.input, dx));
    }
    if need_k {
        out.push((c.kernel, dk));
    }
    if let Some(b) = c.bias {
        if needs(nodes, b) {
            let mut db = vec![T::zero(); g.cout];
            for n in 0..g.n {
                for (co, acc) in db.iter_mut().enumerate() {
                    let s = (n * g.cout + co) * p;
                    *acc = *acc + gout[s..s + p].iter().copied().sum::<T>();
                }
            }
            out.push((b, db));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn all_ones_gives_27() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(Shape::new(1, 1, 3, 3, 3), 1.0));
        let k = g.constant(Tensor::full(Shape::new(1, 1, 3, 3, 3), 1.0));
        let y = g.conv3d(x, k, None, Conv3dParams::unit()).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 1, 1, 1, 1));
        assert_eq!(g.item(y), 27.0);
    }

    #[test]
    fn centered_delta_is_identity() {
        let mut g = Graph::<f64>::new();
        let input = Tensor::from_fn(Shape::new(1, 1, 4, 3, 5), |i| (i as f64 * 0.37).sin());
        let x = g.constant(input.clone());
        let k = g.constant(Tensor::from_fn(Shape::new(1, 1, 3, 3, 3), |i| if i == 13 { 1.0 } else { 0.0 }));
        let y = g.conv3d(x, k, None, Conv3dParams::same(3)).unwrap();
        assert_eq!(g.value(y).data(), input.data());
    }

    #[test]
    fn output_extent_formula() {
        let p = Conv3dParams { stride: [2, 1, 3], padding: [1, 0, 2] };
        assert_eq!(conv3d_output_extent([7, 5, 9], [3, 3, 3], p), Some([4, 3, 4]));
        assert_eq!(conv3d_output_extent([2, 5, 9], [5, 3, 3], Conv3dParams::unit()), None);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(Shape::new(1, 2, 3, 3, 3)));
        let k = g.constant(Tensor::zeros(Shape::new(1, 3, 3, 3, 3)));
        let err = g.conv3d(x, k, None, Conv3dParams::unit()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { axis: "C", .. }));
        let k = g.constant(Tensor::zeros(Shape::new(1, 2, 3, 5, 3)));
        let err = g.conv3d(x, k, None, Conv3dParams::unit()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { axis: "H", .. }));
    }

    #[test]
    fn zero_batch_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(Shape::new(0, 1, 3, 3, 3)));
        let k = g.constant(Tensor::zeros(Shape::new(1, 1, 3, 3, 3)));
        assert!(matches!(
            g.conv3d(x, k, None, Conv3dParams::unit()),
            Err(Error::EmptyOutput { .. })
        ));
    }
}
