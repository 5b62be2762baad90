//! Deterministic synthetic head phantoms.
//!
//! A phantom is a large "head" ellipsoid whose intensity is drawn from a
//! class-specific range, `ellipsoid_count - 1` smaller inner ellipsoids that
//! perturb it, and optional band-limited texture inside the head. The three
//! classes use disjoint head-intensity ranges:
//!
//! | class     | head intensity |
//! |-----------|----------------|
//! | t1        | [0.15, 0.25]   |
//! | flair     | [0.45, 0.55]   |
//! | diffusion | [0.75, 0.85]   |
//!
//! Every ellipsoid has a smoothstep edge: the profile is 1 inside radius
//! `1 - EDGE_WIDTH`, 0 outside radius 1 (normalized ellipsoidal radius), and
//! `t^2 (3 - 2t)` with `t = (1 - r) / EDGE_WIDTH` in between. Its slope is
//! at most `1.5 / EDGE_WIDTH` per unit radius, so with zero texture the
//! difference between neighbouring voxels never exceeds
//!
//! ```text
//! sum over ellipsoids of |intensity| * 1.5 / (EDGE_WIDTH * shortest semi-axis)
//! ```
//!
//! ([`gradient_bound`]). Clamping to `[0, 1]` cannot increase it.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::volume::{ClassLabel, Volume};

pub const EDGE_WIDTH: f64 = 0.3;
pub const MIN_EXTENT: usize = 8;
/// Spacing assigned to phantom voxels (the high-resolution grid).
pub const PHANTOM_SPACING_MM: [f64; 3] = [2.5, 2.5, 2.5];
const TEXTURE_WAVES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub class_kind: ClassLabel,
    pub extents: [usize; 3],
    pub ellipsoid_count: usize,
    pub texture_amplitude: f64,
}

impl PhantomSpec {
    pub fn new(seed: u64, class_kind: ClassLabel, extents: [usize; 3]) -> Self {
        PhantomSpec { seed, class_kind, extents, ellipsoid_count: 4, texture_amplitude: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub intensity: f64,
}

impl Ellipsoid {
    fn profile(&self, p: [f64; 3]) -> f64 {
        let r2: f64 = (0..3).map(|a| math::powi((p[a] - self.center[a]) / self.semi_axes[a], 2)).sum();
        let r = math::sqrt(r2);
        if r >= 1.0 {
            0.0
        } else if r <= 1.0 - EDGE_WIDTH {
            1.0
        } else {
            let t = (1.0 - r) / EDGE_WIDTH;
            t * t * (3.0 - 2.0 * t)
        }
    }
}

fn class_range(c: ClassLabel) -> (f64, f64) {
    match c {
        ClassLabel::T1 => (0.15, 0.25),
        ClassLabel::Flair => (0.45, 0.55),
        ClassLabel::Diffusion => (0.75, 0.85),
    }
}

fn validate(spec: &PhantomSpec) -> Result<()> {
    if spec.extents.iter().any(|e| *e < MIN_EXTENT) {
        return Err(Error::ExtentTooSmall { what: "phantom", extent: spec.extents, minimum: [MIN_EXTENT; 3] });
    }
    if spec.ellipsoid_count == 0 {
        return Err(Error::Config("phantom needs at least one ellipsoid".into()));
    }
    if !(spec.texture_amplitude >= 0.0) {
        return Err(Error::Config("texture_amplitude must be >= 0".into()));
    }
    Ok(())
}

struct Wave {
    k: [f64; 3],
    phase: f64,
}

fn layout(spec: &PhantomSpec) -> (Vec<Ellipsoid>, Vec<Wave>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_9a47);
    let ext = spec.extents.map(|e| e as f64);
    let (lo, hi) = class_range(spec.class_kind);
    let head = Ellipsoid {
        center: ext.map(|e| (e - 1.0) / 2.0 + rng.random_range(-0.03..0.03) * e),
        semi_axes: ext.map(|e| rng.random_range(0.40..0.44) * e),
        intensity: rng.random_range(lo..hi),
    };
    let mut ellipsoids = alloc::vec![head];
    for _ in 1..spec.ellipsoid_count {
        let semi = ext.map(|e| rng.random_range(0.10..0.20) * e);
        let mut center = [0.0; 3];
        for a in 0..3 {
            center[a] = head.center[a] + rng.random_range(-0.4..0.4) * head.semi_axes[a];
        }
        let magnitude = rng.random_range(0.04..0.12);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        ellipsoids.push(Ellipsoid { center, semi_axes: semi, intensity: sign * magnitude });
    }
    let waves = (0..TEXTURE_WAVES)
        .map(|_| Wave {
            // at most a quarter cycle per voxel
            k: [0; 3].map(|_| rng.random_range(-0.9..0.9)),
            phase: rng.random_range(0.0..core::f64::consts::TAU),
        })
        .collect();
    (ellipsoids, waves)
}

/// The ellipsoids a spec produces (head first).
pub fn phantom_ellipsoids(spec: &PhantomSpec) -> Result<Vec<Ellipsoid>> {
    validate(spec)?;
    Ok(layout(spec).0)
}

/// Upper bound on `|v[i+1] - v[i]|` along any axis for a texture-free phantom.
pub fn gradient_bound(spec: &PhantomSpec) -> Result<f64> {
    Ok(phantom_ellipsoids(spec)?
        .iter()
        .map(|e| {
            let shortest = e.semi_axes.iter().copied().fold(f64::INFINITY, f64::min);
            math::abs(e.intensity) * 1.5 / (EDGE_WIDTH * shortest)
        })
        .sum())
}

/// Render a phantom. Identical specs give bit-identical volumes.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Volume> {
    validate(spec)?;
    let (ellipsoids, waves) = layout(spec);
    let head = ellipsoids[0];
    let amp = spec.texture_amplitude / TEXTURE_WAVES as f64;
    let v = Volume::from_fn(spec.extents, PHANTOM_SPACING_MM, |z, y, x| {
        let p = [z as f64, y as f64, x as f64];
        let mut value: f64 = ellipsoids.iter().map(|e| e.intensity * e.profile(p)).sum();
        if amp > 0.0 {
            let tex: f64 = waves
                .iter()
                .map(|w| math::cos(w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase))
                .sum();
            value += amp * tex * head.profile(p);
        }
        value.clamp(0.0, 1.0) as f32
    })?;
    Ok(v.with_label(Some(spec.class_kind)))
}
