//! Dense rank-5 tensors in `(N, C, D, H, W)` row-major layout.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Extents `(N, C, D, H, W)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(pub [usize; 5]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1, 1]);

    pub const fn new(n: usize, c: usize, d: usize, h: usize, w: usize) -> Self {
        Shape([n, c, d, h, w])
    }

    /// Shape of a 1-D parameter vector of length `len` (stored along N).
    pub const fn vector(len: usize) -> Self {
        Shape([len, 1, 1, 1, 1])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn spatial(&self) -> [usize; 3] {
        [self.0[2], self.0[3], self.0[4]]
    }
    /// Voxels per channel.
    pub fn voxels(&self) -> usize {
        self.0[2] * self.0[3] * self.0[4]
    }
    /// Elements per batch sample.
    pub fn per_sample(&self) -> usize {
        self.0[1] * self.voxels()
    }
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
    pub fn with_spatial(&self, s: [usize; 3]) -> Self {
        Shape([self.0[0], self.0[1], s[0], s[1], s[2]])
    }
    pub fn with_channels(&self, c: usize) -> Self {
        Shape([self.0[0], c, self.0[2], self.0[3], self.0[4]])
    }
}

/// A dense tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::DataLength {
                shape: shape.0,
                expected: shape.numel(),
                found: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> T) -> Self {
        Tensor {
            shape,
            data: (0..shape.numel()).map(&mut f).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::of(rng.random_range(lo..hi)))
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }
    pub fn numel(&self) -> usize {
        self.data.len()
    }
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }
    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }
    pub(crate) fn grad_mut(&mut self) -> &mut Option<Vec<T>> {
        &mut self.grad
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::DataLength {
                shape: self.shape.0,
                expected: self.data.len(),
                found: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same tensor with a different (equal-volume) shape.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::DataLength {
                shape: shape.0,
                expected: shape.numel(),
                found: self.data.len(),
            });
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), self.data.len());
        }
        Ok(self)
    }

    /// Element at `(n, c, d, h, w)`.
    pub fn at(&self, idx: [usize; 5]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn offset(&self, idx: [usize; 5]) -> usize {
        let s = self.shape.0;
        (((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]) * s[4] + idx[4]
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }

    /// Slice of samples `[start, start + len)` along N.
    pub fn batch_slice(&self, start: usize, len: usize) -> Self {
        let per = self.shape.per_sample();
        let mut s = self.shape;
        s.0[0] = len;
        Tensor {
            shape: s,
            data: self.data[start * per..(start + len) * per].to_vec(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Stack equal-shaped tensors along N.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack", "no tensors"))?;
        let mut shape = first.shape;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        let mut n = 0;
        for p in parts {
            for (axis, name) in [(1, "C"), (2, "D"), (3, "H"), (4, "W")] {
                if p.shape.0[axis] != shape.0[axis] {
                    return Err(Error::ShapeMismatch {
                        op: "stack",
                        axis: name,
                        expected: shape.0[axis],
                        found: p.shape.0[axis],
                    });
                }
            }
            n += p.shape.n();
            data.extend_from_slice(&p.data);
        }
        shape.0[0] = n;
        Tensor::new(shape, data)
    }
}
