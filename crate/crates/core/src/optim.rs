//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::nn::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Some gradient was NaN or infinite; nothing was changed.
    SkippedNonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.entries().iter().map(|e| vec![T::zero(); e.tensor.numel()]).collect();
        Adam { config, t: 0, m: zeros.clone(), v: zeros }
    }

    /// Number of applied steps.
    pub fn steps(&self) -> u64 {
        self.t
    }
    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }
    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// Restore saved state; the moment layouts must match.
    pub fn restore(&mut self, t: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<()> {
        let ok = |x: &[Vec<T>]| x.len() == self.m.len() && x.iter().zip(&self.m).all(|(a, b)| a.len() == b.len());
        if !ok(&m) || !ok(&v) {
            return Err(Error::invalid("Adam::restore", "moment buffers do not match the parameters"));
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[&[T]]) -> Result<StepOutcome> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::invalid("Adam::step", "gradient count differs from parameter count"));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params.tensor(i).numel() {
                return Err(Error::invalid("Adam::step", "gradient length differs from parameter length"));
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Ok(StepOutcome::SkippedNonFinite);
        }
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - math::powi(c.beta1, self.t as i32);
        let bc2 = 1.0 - math::powi(c.beta2, self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                let gj = g[j].f64();
                let mj = c.beta1 * m[j].f64() + (1.0 - c.beta1) * gj;
                let vj = c.beta2 * v[j].f64() + (1.0 - c.beta2) * gj * gj;
                m[j] = T::of(mj);
                v[j] = T::of(vj);
                let update = c.lr * (mj / bc1) / (math::sqrt(vj / bc2) + c.eps);
                p[j] = T::of(p[j].f64() - update);
            }
        }
        Ok(StepOutcome::Applied)
    }
}
