//! The forward model `y = (x * k) downsampled + n` and the interpolation
//! baselines.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::resample::{filter_axis_mirror, separable3, upsample_taps, AxisTaps, InterpMode};
use crate::volume::Volume;

/// Super-resolution task: which axes lose resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Factor 2 on every axis (2.5 mm -> 5 mm isotropic).
    Isotropic,
    /// Factor 2 on the slice (depth) axis only (thick axial slices).
    Anisotropic,
}

impl Task {
    pub fn factors(self) -> [usize; 3] {
        match self {
            Task::Isotropic => [2, 2, 2],
            Task::Anisotropic => [2, 1, 1],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Isotropic => "isotropic",
            Task::Anisotropic => "anisotropic",
        }
    }
}

/// Separable sampled Gaussian, normalized to unit sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub struct BlurKernel {
    sigmas: [f64; 3],
    support: [usize; 3],
    axes: [Vec<f64>; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct KernelSpec {
    sigmas: [f64; 3],
    support: [usize; 3],
}

impl TryFrom<KernelSpec> for BlurKernel {
    type Error = Error;
    fn try_from(s: KernelSpec) -> Result<Self> {
        gaussian_kernel3d(s.sigmas, s.support)
    }
}

impl From<BlurKernel> for KernelSpec {
    fn from(k: BlurKernel) -> Self {
        KernelSpec { sigmas: k.sigmas, support: k.support }
    }
}

impl BlurKernel {
    pub fn sigmas(&self) -> [f64; 3] {
        self.sigmas
    }
    pub fn support(&self) -> [usize; 3] {
        self.support
    }
    /// 1-D factor along `axis` (0 = D, 1 = H, 2 = W).
    pub fn axis(&self, axis: usize) -> &[f64] {
        &self.axes[axis]
    }
    /// Dense `(kd, kh, kw)` weights, `w[i,j,k] = w_d[i] w_h[j] w_w[k]`.
    pub fn weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.support.iter().product());
        for a in &self.axes[0] {
            for b in &self.axes[1] {
                for c in &self.axes[2] {
                    out.push(a * b * c);
                }
            }
        }
        out
    }

    /// Anti-aliasing default: `sigma = 0.5 * factor` on downsampled axes
    /// (0 elsewhere), support `2 * ceil(3 sigma) + 1`.
    pub fn for_factors(factors: [usize; 3]) -> Self {
        let sigmas = factors.map(|f| if f > 1 { 0.5 * f as f64 } else { 0.0 });
        let support = sigmas.map(|s| 2 * math::ceil(3.0 * s) as usize + 1);
        gaussian_kernel3d(sigmas, support).expect("default kernel is valid")
    }
}

pub fn gaussian_kernel3d(sigmas: [f64; 3], support: [usize; 3]) -> Result<BlurKernel> {
    let mut axes: [Vec<f64>; 3] = Default::default();
    for a in 0..3 {
        if support[a] == 0 || support[a] % 2 == 0 {
            return Err(Error::invalid("gaussian_kernel3d", "support must be odd and >= 1"));
        }
        if !(sigmas[a] >= 0.0) || !sigmas[a].is_finite() {
            return Err(Error::invalid("gaussian_kernel3d", "sigma must be finite and >= 0"));
        }
        let r = (support[a] / 2) as f64;
        let raw: Vec<f64> = (0..support[a])
            .map(|i| {
                let t = i as f64 - r;
                if sigmas[a] == 0.0 {
                    if t == 0.0 { 1.0 } else { 0.0 }
                } else {
                    math::exp(-t * t / (2.0 * sigmas[a] * sigmas[a]))
                }
            })
            .collect();
        let s: f64 = raw.iter().sum();
        axes[a] = raw.into_iter().map(|v| v / s).collect();
    }
    Ok(BlurKernel { sigmas, support, axes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kernel: BlurKernel,
    pub factors: [usize; 3],
    /// Standard deviation of the additive Gaussian noise, as a fraction of
    /// the unit intensity range.
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl DegradationSpec {
    /// Default kernel for the task's factors and `noise_sigma = 0.01`.
    pub fn for_task(task: Task, noise_seed: u64) -> Self {
        let factors = task.factors();
        DegradationSpec { kernel: BlurKernel::for_factors(factors), factors, noise_sigma: 0.01, noise_seed }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.noise_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.iter().any(|f| *f == 0) {
            return Err(Error::Config("degradation factors must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

fn check_divisible(extent: [usize; 3], factors: [usize; 3]) -> Result<()> {
    if factors.iter().any(|f| *f == 0) || (0..3).any(|a| extent[a] % factors[a] != 0) {
        return Err(Error::NotDivisible { extent, factors });
    }
    Ok(())
}

/// Separable correlation with the kernel, mirror-padded, in `f64`.
pub fn blur(x: &Volume, kernel: &BlurKernel) -> Vec<f64> {
    let [d, h, w] = x.extents();
    let data: Vec<f64> = x.data().iter().map(|v| *v as f64).collect();
    let data = filter_axis_mirror(&data, d * h, w, 1, kernel.axis(2));
    let data = filter_axis_mirror(&data, d, h, w, kernel.axis(1));
    filter_axis_mirror(&data, 1, d, h * w, kernel.axis(0))
}

fn decimate<T: Copy>(data: &[T], extent: [usize; 3], factors: [usize; 3]) -> (Vec<T>, [usize; 3]) {
    let [d, h, w] = extent;
    let out = [d / factors[0], h / factors[1], w / factors[2]];
    let mut v = Vec::with_capacity(out.iter().product());
    for z in 0..out[0] {
        for y in 0..out[1] {
            for x in 0..out[2] {
                v.push(data[((z * factors[0]) * h + y * factors[1]) * w + x * factors[2]]);
            }
        }
    }
    (v, out)
}

fn scaled_spacing(s: [f64; 3], factors: [usize; 3], up: bool) -> [f64; 3] {
    let mut o = s;
    for a in 0..3 {
        o[a] = if up { s[a] / factors[a] as f64 } else { s[a] * factors[a] as f64 };
    }
    o
}

/// Keep every `factor`-th voxel starting at index 0.
pub fn downsample(x: &Volume, factors: [usize; 3]) -> Result<Volume> {
    check_divisible(x.extents(), factors)?;
    let (data, ext) = decimate(x.data(), x.extents(), factors);
    Ok(Volume::new(ext, scaled_spacing(x.spacing_mm(), factors, false), data)?.with_label(x.label()))
}

/// Blur, decimate, add seeded Gaussian noise.
///
/// The result is not clipped to `[0, 1]`.
pub fn degrade(x: &Volume, spec: &DegradationSpec) -> Result<Volume> {
    spec.validate()?;
    check_divisible(x.extents(), spec.factors)?;
    let blurred = blur(x, &spec.kernel);
    let (mut lr, ext) = decimate(&blurred, x.extents(), spec.factors);
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
        for v in &mut lr {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise_sigma * z;
        }
    }
    let data = lr.into_iter().map(|v| (v as f32).clamp(f32::MIN, f32::MAX)).collect();
    Ok(Volume::new(ext, scaled_spacing(x.spacing_mm(), spec.factors, false), data)?.with_label(x.label()))
}

/// Separable trilinear or tricubic upsampling with edge clamping.
pub fn interp_upsample(y: &Volume, factors: [usize; 3], mode: InterpMode) -> Result<Volume> {
    if factors.iter().any(|f| *f == 0) {
        return Err(Error::invalid("interp_upsample", "factors must be >= 1"));
    }
    let ext = y.extents();
    let taps: [AxisTaps; 3] = [0, 1, 2].map(|a| upsample_taps(ext[a], factors[a], mode));
    let data: Vec<f64> = y.data().iter().map(|v| *v as f64).collect();
    let (out, out_ext) = separable3(&data, 1, ext, &taps);
    let data = out.into_iter().map(|v| v as f32).collect();
    Ok(Volume::new(out_ext, scaled_spacing(y.spacing_mm(), factors, true), data)?.with_label(y.label()))
}

/// Spec used for patch `index` of a volume: the noise seed is mixed with
/// the index so that patches receive independent noise.
pub fn patch_spec(spec: &DegradationSpec, index: usize) -> DegradationSpec {
    let mut s = spec.clone();
    s.noise_seed = mix_seed(spec.noise_seed, index as u64);
    s
}

/// SplitMix64 finalizer over `seed + stream`.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Tile `hr` with `hr_patch` windows at `stride` (partial tails dropped)
/// and degrade each window with [`patch_spec`]`(spec, i)`, `i` counting
/// windows in raster order. Returns `(lr, hr)` pairs.
pub fn extract_patch_pairs(
    hr: &Volume,
    spec: &DegradationSpec,
    hr_patch: [usize; 3],
    stride: [usize; 3],
) -> Result<Vec<(Volume, Volume)>> {
    spec.validate()?;
    check_divisible(hr_patch, spec.factors)?;
    if hr_patch.iter().chain(&stride).any(|v| *v == 0) {
        return Err(Error::invalid("extract_patch_pairs", "patch and stride extents must be >= 1"));
    }
    let ext = hr.extents();
    let origins = |a: usize| -> Vec<usize> {
        if hr_patch[a] > ext[a] {
            Vec::new()
        } else {
            (0..=ext[a] - hr_patch[a]).step_by(stride[a]).collect()
        }
    };
    let (oz, oy, ox) = (origins(0), origins(1), origins(2));
    let mut out = Vec::with_capacity(oz.len() * oy.len() * ox.len());
    for z in &oz {
        for y in &oy {
            for x in &ox {
                let patch = hr.crop([*z, *y, *x], hr_patch)?;
                let lr = degrade(&patch, &patch_spec(spec, out.len()))?;
                out.push((lr, patch));
            }
        }
    }
    Ok(out)
}

/// Total weight of a kernel (used by tests and diagnostics).
pub fn kernel_sum(k: &BlurKernel) -> f64 {
    k.weights().iter().sum()
}
