//! Single-channel voxel grids with physical spacing.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Contrast class used to pretrain the perceptual classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    T1,
    Flair,
    Diffusion,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::T1, ClassLabel::Flair, ClassLabel::Diffusion];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::T1 => "t1",
            ClassLabel::Flair => "flair",
            ClassLabel::Diffusion => "diffusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

/// A `(D, H, W)` voxel grid, row-major, with per-axis spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    extents: [usize; 3],
    spacing_mm: [f64; 3],
    data: Vec<f32>,
    label: Option<ClassLabel>,
}

impl Volume {
    pub fn new(extents: [usize; 3], spacing_mm: [f64; 3], data: Vec<f32>) -> Result<Self> {
        let n: usize = extents.iter().product();
        if data.len() != n {
            return Err(Error::DataLength {
                shape: [1, 1, extents[0], extents[1], extents[2]],
                expected: n,
                found: data.len(),
            });
        }
        if spacing_mm.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("volume", "spacing components must be finite and > 0"));
        }
        Ok(Volume { extents, spacing_mm, data, label: None })
    }

    pub fn filled(extents: [usize; 3], spacing_mm: [f64; 3], value: f32) -> Result<Self> {
        Self::new(extents, spacing_mm, alloc::vec![value; extents.iter().product()])
    }

    pub fn from_fn(extents: [usize; 3], spacing_mm: [f64; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let [d, h, w] = extents;
        let mut data = Vec::with_capacity(d * h * w);
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(extents, spacing_mm, data)
    }

    pub fn with_label(mut self, label: Option<ClassLabel>) -> Self {
        self.label = label;
        self
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }
    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
    pub fn label(&self) -> Option<ClassLabel> {
        self.label
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[(z * self.extents[1] + y) * self.extents[2] + x]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }

    /// Sub-block starting at `origin` with the given `extents`.
    pub fn crop(&self, origin: [usize; 3], extents: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if origin[a] + extents[a] > self.extents[a] {
                return Err(Error::invalid("crop", "block exceeds the volume"));
            }
        }
        let v = Volume::from_fn(extents, self.spacing_mm, |z, y, x| {
            self.at(origin[0] + z, origin[1] + y, origin[2] + x)
        })?;
        Ok(v.with_label(self.label))
    }

    /// `(1, 1, D, H, W)` tensor view.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let [d, h, w] = self.extents;
        Tensor::new(Shape::new(1, 1, d, h, w), self.data.iter().map(|v| T::of(*v as f64)).collect())
            .expect("extents match data")
    }

    /// Sample `n` of a `(N, 1, D, H, W)` tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize, spacing_mm: [f64; 3]) -> Result<Self> {
        let s = t.shape();
        if s.c() != 1 {
            return Err(Error::ShapeMismatch { op: "volume_from_tensor", axis: "C", expected: 1, found: s.c() });
        }
        if n >= s.n() {
            return Err(Error::invalid("volume_from_tensor", "sample index out of range"));
        }
        let per = s.per_sample();
        let data = t.data()[n * per..(n + 1) * per].iter().map(|v| v.f64() as f32).collect();
        Volume::new(s.spatial(), spacing_mm, data)
    }

    /// Stack volumes of equal extents into `(N, 1, D, H, W)`.
    pub fn batch<'a, T: Scalar>(vols: impl IntoIterator<Item = &'a Volume>) -> Result<Tensor<T>> {
        let parts: Vec<Tensor<T>> = vols.into_iter().map(|v| v.to_tensor()).collect();
        Tensor::stack(&parts)
    }
}

/// Affine map of the intensities onto `[0, 1]`; constant volumes map to 0.
pub fn normalize_minmax(v: &Volume) -> Volume {
    let (lo, hi) = v.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let range = hi - lo;
    let data = if v.is_empty() || !(range > 0.0) {
        alloc::vec![0.0; v.len()]
    } else {
        v.data.iter().map(|x| ((*x as f64 - lo) / range) as f32).collect()
    };
    Volume { data, ..v.clone() }
}
