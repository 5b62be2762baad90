use alloc::string::String;

use serde::{Deserialize, Serialize};

use super::{Pair, ValMetrics};
use crate::degradation::{interp_upsample, Task};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{capped_psnr, mse, psnr, psnr_from_mse, ssim3d, SsimParams};
use crate::nn::Network;
use crate::ops::NormMode;
use crate::resample::InterpMode;
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Error,
}

/// One evaluated experiment: mean SSIM and mean (capped) PSNR over the
/// test volumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub task: Task,
    pub ssim: f64,
    pub psnr_db: f64,
    pub n_volumes: usize,
    pub status: RowStatus,
}

impl MetricsRow {
    pub fn failed(experiment: impl Into<String>, task: Task) -> Self {
        MetricsRow { experiment: experiment.into(), task, ssim: f64::NAN, psnr_db: f64::NAN, n_volumes: 0, status: RowStatus::Error }
    }
}

/// Upsample one LR volume with the generator in eval mode.
pub fn super_resolve(generator: &mut Network<f32>, lr: &Volume) -> Result<Volume> {
    let scale = generator.generator_config().ok_or(Error::invalid("super_resolve", "network is not a generator"))?.scale;
    let mut g = Graph::new();
    let b = generator.bind(&mut g, false);
    let x = g.constant(lr.to_tensor());
    let y = generator.generator_forward(&mut g, &b, x, NormMode::Eval)?;
    let spacing = lr.spacing_mm();
    let spacing = [0, 1, 2].map(|a| spacing[a] / scale[a] as f64);
    Ok(Volume::from_tensor(g.value(y), 0, spacing)?.with_label(lr.label()))
}

/// Evaluate any LR-to-HR map on `pairs`.
pub fn evaluate_with(
    experiment: &str,
    task: Task,
    pairs: &[Pair],
    ssim: &SsimParams,
    mut f: impl FnMut(&Volume) -> Result<Volume>,
) -> Result<MetricsRow> {
    if pairs.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let (mut s_sum, mut p_sum) = (0.0, 0.0);
    for p in pairs {
        let sr = f(&p.lr)?;
        s_sum += ssim3d(&sr, &p.hr, ssim)?;
        p_sum += capped_psnr(psnr(&sr, &p.hr, ssim.data_range)?);
    }
    let n = pairs.len() as f64;
    Ok(MetricsRow { experiment: experiment.into(), task, ssim: s_sum / n, psnr_db: p_sum / n, n_volumes: pairs.len(), status: RowStatus::Ok })
}

pub fn evaluate_generator(generator: &mut Network<f32>, experiment: &str, task: Task, pairs: &[Pair], ssim: &SsimParams) -> Result<MetricsRow> {
    evaluate_with(experiment, task, pairs, ssim, |lr| super_resolve(generator, lr))
}

/// Interpolation baseline evaluated through the same path as the models.
pub fn interpolation_row(experiment: &str, task: Task, pairs: &[Pair], mode: InterpMode, ssim: &SsimParams) -> Result<MetricsRow> {
    evaluate_with(experiment, task, pairs, ssim, |lr| interp_upsample(lr, task.factors(), mode))
}

pub(super) fn val_metrics(generator: &mut Network<f32>, val: &[Pair], ssim: &SsimParams) -> Result<ValMetrics> {
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let (mut m, mut s) = (0.0, 0.0);
    for p in val {
        let sr = super_resolve(generator, &p.lr)?;
        m += mse(&sr, &p.hr)?;
        s += ssim3d(&sr, &p.hr, ssim)?;
    }
    let n = val.len() as f64;
    Ok(ValMetrics { mse: m / n, psnr_db: psnr_from_mse(m / n, ssim.data_range), ssim: s / n })
}
