//! Separable resampling and filtering along one axis of a dense array.
//!
//! Arrays are viewed as `(outer, len, inner)`: resampling the D axis of an
//! `(N, C, D, H, W)` tensor uses `outer = N*C`, `inner = H*W`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpMode {
    Trilinear,
    /// Keys cubic convolution with `a = -0.5`.
    Tricubic,
}

/// Per-output-sample source taps `(input index, weight)` for one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisTaps {
    pub in_len: usize,
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl AxisTaps {
    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    pub fn identity(len: usize) -> Self {
        AxisTaps { in_len: len, taps: (0..len).map(|i| vec![(i, 1.0)]).collect() }
    }
}

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys_kernel(x: f64) -> f64 {
    let x = math::abs(x);
    let a = KEYS_A;
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Taps for upsampling an axis of length `in_len` by an integer `factor`.
///
/// Grids are origin-aligned: output sample `o` sits at input coordinate
/// `o / factor`, matching decimation that keeps index 0. Out-of-range
/// neighbours are clamped to the edge.
pub fn upsample_taps(in_len: usize, factor: usize, mode: InterpMode) -> AxisTaps {
    assert!(in_len > 0 && factor > 0);
    let last = in_len as isize - 1;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    let taps = (0..in_len * factor)
        .map(|o| {
            let i0 = o / factor;
            let frac = (o % factor) as f64 / factor as f64;
            if frac == 0.0 {
                return vec![(i0, 1.0)];
            }
            let i0 = i0 as isize;
            match mode {
                InterpMode::Trilinear => vec![(clamp(i0), 1.0 - frac), (clamp(i0 + 1), frac)],
                InterpMode::Tricubic => vec![
                    (clamp(i0 - 1), keys_kernel(frac + 1.0)),
                    (clamp(i0), keys_kernel(frac)),
                    (clamp(i0 + 1), keys_kernel(1.0 - frac)),
                    (clamp(i0 + 2), keys_kernel(2.0 - frac)),
                ],
            }
        })
        .collect();
    AxisTaps { in_len, taps }
}

/// Apply `taps` along the middle axis of an `(outer, in_len, inner)` array.
pub fn apply_taps<T: Scalar>(data: &[T], outer: usize, inner: usize, taps: &AxisTaps) -> Vec<T> {
    let (in_len, out_len) = (taps.in_len, taps.out_len());
    debug_assert_eq!(data.len(), outer * in_len * inner);
    let mut out = vec![T::zero(); outer * out_len * inner];
    for o in 0..outer {
        for (j, tj) in taps.taps.iter().enumerate() {
            let dst = &mut out[(o * out_len + j) * inner..(o * out_len + j + 1) * inner];
            for &(i, w) in tj {
                let w = T::of(w);
                let src = &data[(o * in_len + i) * inner..(o * in_len + i + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = *d + w * *s);
            }
        }
    }
    out
}

/// Adjoint of [`apply_taps`].
pub fn apply_taps_transpose<T: Scalar>(grad: &[T], outer: usize, inner: usize, taps: &AxisTaps) -> Vec<T> {
    let (in_len, out_len) = (taps.in_len, taps.out_len());
    debug_assert_eq!(grad.len(), outer * out_len * inner);
    let mut out = vec![T::zero(); outer * in_len * inner];
    for o in 0..outer {
        for (j, tj) in taps.taps.iter().enumerate() {
            let src = &grad[(o * out_len + j) * inner..(o * out_len + j + 1) * inner];
            for &(i, w) in tj {
                let w = T::of(w);
                let dst = &mut out[(o * in_len + i) * inner..(o * in_len + i + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = *d + w * *s);
            }
        }
    }
    out
}

/// Mirror (reflect-101) index folding: `-1 -> 1`, `n -> n - 2`.
pub fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

/// Correlate the middle axis with a centered odd-length `kernel`, mirror
/// padding the boundaries. Output has the input's extents.
pub fn filter_axis_mirror(data: &[f64], outer: usize, len: usize, inner: usize, kernel: &[f64]) -> Vec<f64> {
    assert!(kernel.len() % 2 == 1);
    if kernel.len() == 1 && kernel[0] == 1.0 {
        return data.to_vec();
    }
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for j in 0..len {
            let dst = &mut out[(o * len + j) * inner..(o * len + j + 1) * inner];
            for (t, w) in kernel.iter().enumerate() {
                let i = mirror_index(j as isize + t as isize - r, len);
                let src = &data[(o * len + i) * inner..(o * len + i + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
            }
        }
    }
    out
}

/// Apply a per-axis operation to all three spatial axes of a `(D, H, W)`
/// block repeated `outer` times. Returns the new data and extents.
pub(crate) fn separable3<T: Scalar>(
    data: &[T],
    outer: usize,
    extents: [usize; 3],
    taps: &[AxisTaps; 3],
) -> (Vec<T>, [usize; 3]) {
    let [d, h, _] = extents;
    let [od, oh, ow] = [taps[0].out_len(), taps[1].out_len(), taps[2].out_len()];
    let x = apply_taps(data, outer * d * h, 1, &taps[2]);
    let x = apply_taps(&x, outer * d, ow, &taps[1]);
    let x = apply_taps(&x, outer, oh * ow, &taps[0]);
    (x, [od, oh, ow])
}

pub(crate) fn separable3_transpose<T: Scalar>(
    grad: &[T],
    outer: usize,
    in_extents: [usize; 3],
    taps: &[AxisTaps; 3],
) -> Vec<T> {
    let [d, h, _] = in_extents;
    let [oh, ow] = [taps[1].out_len(), taps[2].out_len()];
    let g = apply_taps_transpose(grad, outer, oh * ow, &taps[0]);
    let g = apply_taps_transpose(&g, outer * d, ow, &taps[1]);
    apply_taps_transpose(&g, outer * d * h, 1, &taps[2])
}
