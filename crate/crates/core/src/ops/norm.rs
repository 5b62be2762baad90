//! Per-channel batch normalization over `(N, D, H, W)`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{needs, val, Contribs, Op};
use crate::error::{Error, Result};
use crate::graph::{Graph, Node, Var};
use crate::scalar::Scalar;
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { eps: 1e-5, momentum: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; nothing is updated.
    Eval,
}

pub(crate) struct BnCtx<T> {
    pub(crate) x: Var,
    pub(crate) gamma: Var,
    pub(crate) beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
}

impl<T: Scalar> Graph<T> {
    /// Batch normalization. In [`NormMode::Train`] the running statistics
    /// are blended towards the batch statistics with `momentum` (the running
    /// variance uses the unbiased estimate).
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm3d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [T],
        running_var: &mut [T],
        cfg: BatchNormConfig,
        mode: NormMode,
    ) -> Result<Var> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        if !(cfg.eps > 0.0) {
            return Err(Error::invalid("batch_norm3d", "eps must be > 0"));
        }
        let xs = self.shape(x);
        let c = xs.c();
        for v in [gamma, beta] {
            if self.shape(v) != Shape::vector(c) {
                return Err(Error::ShapeMismatch { op: "batch_norm3d", axis: "C", expected: c, found: self.shape(v).numel() });
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::ShapeMismatch { op: "batch_norm3d", axis: "C", expected: c, found: running_mean.len() });
        }
        let vox = xs.voxels();
        let count = xs.n() * vox;
        let train = mode == NormMode::Train;
        if train && count == 0 {
            return Err(Error::invalid("batch_norm3d", "train mode needs at least one value per channel"));
        }
        let data = self.value(x).data();
        let mut inv_std = vec![T::zero(); c];
        let mut mean = vec![0.0f64; c];
        for ch in 0..c {
            if train {
                let mut s = 0.0;
                for n in 0..xs.n() {
                    let base = (n * c + ch) * vox;
                    s += data[base..base + vox].iter().map(|v| v.f64()).sum::<f64>();
                }
                let m = s / count as f64;
                let mut ss = 0.0;
                for n in 0..xs.n() {
                    let base = (n * c + ch) * vox;
                    ss += data[base..base + vox]
                        .iter()
                        .map(|v| {
                            let d = v.f64() - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = ss / count as f64;
                mean[ch] = m;
                inv_std[ch] = T::of(1.0 / crate::math::sqrt(var + cfg.eps));
                let unbiased = if count > 1 { ss / (count - 1) as f64 } else { var };
                let mo = cfg.momentum;
                running_mean[ch] = T::of((1.0 - mo) * running_mean[ch].f64() + mo * m);
                running_var[ch] = T::of((1.0 - mo) * running_var[ch].f64() + mo * unbiased);
            } else {
                mean[ch] = running_mean[ch].f64();
                inv_std[ch] = T::of(1.0 / crate::math::sqrt(running_var[ch].f64() + cfg.eps));
            }
        }
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        for n in 0..xs.n() {
            for ch in 0..c {
                let base = (n * c + ch) * vox;
                let m = T::of(mean[ch]);
                for i in base..base + vox {
                    let h = (data[i] - m) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gm[ch] * h + bt[ch];
                }
            }
        }
        let ctx = BnCtx { x, gamma, beta, xhat, inv_std, train };
        Ok(self.push_op(out, xs, Op::BatchNorm(ctx)))
    }
}

pub(super) fn backward<T: Scalar>(c: &BnCtx<T>, gout: &[T], nodes: &[Node<T>]) -> Contribs<T> {
    let xs = val(nodes, c.x).shape();
    let ch_count = xs.c();
    let vox = xs.voxels();
    let count = T::of((xs.n() * vox) as f64);
    let gamma = val(nodes, c.gamma).data();

    let mut sum_g = vec![T::zero(); ch_count];
    let mut sum_gx = vec![T::zero(); ch_count];
    for n in 0..xs.n() {
        for ch in 0..ch_count {
            let base = (n * ch_count + ch) * vox;
            for i in base..base + vox {
                sum_g[ch] = sum_g[ch] + gout[i];
                sum_gx[ch] = sum_gx[ch] + gout[i] * c.xhat[i];
            }
        }
    }
    let mut out = Vec::new();
    if needs(nodes, c.x) {
        let mut dx = vec![T::zero(); gout.len()];
        for n in 0..xs.n() {
            for ch in 0..ch_count {
                let base = (n * ch_count + ch) * vox;
                let k = gamma[ch] * c.inv_std[ch];
                for i in base..base + vox {
                    dx[i] = if c.train {
                        k * (gout[i] - sum_g[ch] / count - c.xhat[i] * sum_gx[ch] / count)
                    } else {
                        k * gout[i]
                    };
                }
            }
        }
        out.push((c.x, dx));
    }
    if needs(nodes, c.gamma) {
        out.push((c.gamma, sum_gx));
    }
    if needs(nodes, c.beta) {
        out.push((c.beta, sum_g));
    }
    out
}
