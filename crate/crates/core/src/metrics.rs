//! PSNR and volumetric SSIM, both computed in `f64`.
//!
//! SSIM is evaluated fully in 3D: local means, variances and the covariance
//! come from a separable Gaussian window with reflect-101 (mirror) padding,
//! and the score is the mean of the local SSIM map over all voxels.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::resample::filter_axis_mirror;
use crate::volume::Volume;

/// Value reported in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 300.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 7, window_sigma: 1.5, k1: 0.01, k2: 0.03, data_range: 1.0 }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config("ssim window must be odd and >= 3".into()));
        }
        if !(self.window_sigma > 0.0) || !(self.k1 > 0.0) || !(self.k2 > 0.0) || !(self.data_range > 0.0) {
            return Err(Error::Config("ssim sigma, k1, k2 and data_range must be > 0".into()));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian window.
    pub fn window_weights(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let t = i as f64 - r;
                math::exp(-t * t / (2.0 * self.window_sigma * self.window_sigma))
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

fn check_extents(a: &Volume, b: &Volume, op: &'static str) -> Result<()> {
    let (ea, eb) = (a.extents(), b.extents());
    for (i, axis) in ["D", "H", "W"].into_iter().enumerate() {
        if ea[i] != eb[i] {
            return Err(Error::ShapeMismatch { op, axis, expected: ea[i], found: eb[i] });
        }
    }
    Ok(())
}

/// Mean squared error in `f64`.
pub fn mse(a: &Volume, b: &Volume) -> Result<f64> {
    check_extents(a, b, "mse")?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical volumes.
pub fn psnr(a: &Volume, b: &Volume, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::invalid("psnr", "data_range must be > 0"));
    }
    Ok(psnr_from_mse(mse(a, b)?, data_range))
}

pub fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * math::log10(data_range * data_range / mse)
    }
}

/// PSNR clamped to [`PSNR_CAP_DB`] for reporting.
pub fn capped_psnr(db: f64) -> f64 {
    if db > PSNR_CAP_DB {
        PSNR_CAP_DB
    } else {
        db
    }
}

fn smooth(data: &[f64], ext: [usize; 3], w: &[f64]) -> Vec<f64> {
    let [d, h, wd] = ext;
    let s = filter_axis_mirror(data, d * h, wd, 1, w);
    let s = filter_axis_mirror(&s, d, h, wd, w);
    filter_axis_mirror(&s, 1, d, h * wd, w)
}

/// Local SSIM values, one per voxel.
pub fn ssim_map(a: &Volume, b: &Volume, p: &SsimParams) -> Result<Vec<f64>> {
    p.validate()?;
    check_extents(a, b, "ssim3d")?;
    let ext = a.extents();
    if ext.iter().any(|e| *e < p.window) {
        return Err(Error::ExtentTooSmall { what: "ssim3d input", extent: ext, minimum: [p.window; 3] });
    }
    let w = p.window_weights();
    let x: Vec<f64> = a.data().iter().map(|v| *v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|v| *v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
    let mx = smooth(&x, ext, &w);
    let my = smooth(&y, ext, &w);
    let sxx = smooth(&xx, ext, &w);
    let syy = smooth(&yy, ext, &w);
    let sxy = smooth(&xy, ext, &w);
    let c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
    let c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);
    Ok((0..x.len())
        .map(|i| {
            let (ma, mb) = (mx[i], my[i]);
            let va = sxx[i] - ma * ma;
            let vb = syy[i] - mb * mb;
            let cov = sxy[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect())
}

/// Mean of the local SSIM map.
pub fn ssim3d(a: &Volume, b: &Volume, p: &SsimParams) -> Result<f64> {
    let map = ssim_map(a, b, p)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(f: impl FnMut(usize, usize, usize) -> f32) -> Volume {
        Volume::from_fn([8, 9, 7], [1.0; 3], f).unwrap()
    }

    #[test]
    fn psnr_of_known_mse() {
        let a = vol(|_, _, _| 0.5);
        let b = vol(|z, y, x| if (z + y + x) % 2 == 0 { 0.6 } else { 0.4 });
        let db = psnr(&a, &b, 1.0).unwrap();
        assert!((db - 20.0).abs() < 1e-6);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(capped_psnr(f64::INFINITY), PSNR_CAP_DB);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = vol(|z, y, x| ((z * 31 + y * 7 + x) % 11) as f32 / 10.0);
        assert_eq!(ssim3d(&a, &a, &SsimParams::default()).unwrap(), 1.0);
        let c = vol(|_, _, _| 0.25);
        assert_eq!(ssim3d(&c, &c, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn anticorrelated_is_below_one() {
        let a = vol(|z, y, x| ((z * 31 + y * 7 + x) % 11) as f32 / 10.0);
        let b = vol(|z, y, x| 1.0 - ((z * 31 + y * 7 + x) % 11) as f32 / 10.0);
        let s = ssim3d(&a, &b, &SsimParams::default()).unwrap();
        assert!(s < 0.0, "{s}");
        assert_eq!(s, ssim3d(&b, &a, &SsimParams::default()).unwrap());
    }

    #[test]
    fn small_or_mismatched_rejected() {
        let a = Volume::filled([6, 8, 8], [1.0; 3], 0.0).unwrap();
        assert!(matches!(ssim3d(&a, &a, &SsimParams::default()), Err(Error::ExtentTooSmall { .. })));
        let b = Volume::filled([6, 8, 9], [1.0; 3], 0.0).unwrap();
        assert!(matches!(psnr(&a, &b, 1.0), Err(Error::ShapeMismatch { axis: "W", .. })));
        let p = SsimParams { window: 4, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
