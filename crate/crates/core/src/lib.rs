//! Volumetric single-image super-resolution.
//!
//! The crate is `no_std` + `alloc`. It carries a rank-5 `(N, C, D, H, W)`
//! tensor engine with reverse-mode differentiation, the degradation model
//! used to synthesize low-resolution volumes, the generator, discriminator
//! and 3D VGG networks, all training objectives, the PSNR/SSIM metrics, and
//! the Adam-driven training loops. File formats, checkpoints and the command
//! line live in the `voxsr` companion crate.
//!
//! The `std` feature (on by default) only switches dependencies to their
//! `std` builds (runtime SIMD detection in the GEMM kernels, `std` error
//! traits); behaviour is identical without it.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod degradation;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub(crate) mod math;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod phantom;
pub mod resample;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
pub use volume::{ClassLabel, Volume};
