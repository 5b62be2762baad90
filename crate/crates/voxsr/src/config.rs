//! JSON run configurations. Relative paths inside a config file are
//! resolved against the directory holding that file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use voxsr_core::degradation::{DegradationSpec, Task};
use voxsr_core::metrics::SsimParams;
use voxsr_core::phantom::PhantomSpec;
use voxsr_core::train::{ClassCorpusConfig, PairCorpusConfig, TrainConfig};

use crate::error::{CliError, Result};

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config { path: path.into(), message: e.to_string() })
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        if p.is_relative() {
            if let Some(dir) = base.parent() {
                *p = dir.join(&*p);
            }
        }
    }
}

/// `phantom`: explicit specs, a labelled class corpus and/or LR/HR pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomRun {
    pub phantoms: Vec<PhantomSpec>,
    pub class_corpus: Option<ClassCorpusConfig>,
    pub pairs: Option<PairsRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsRun {
    pub task: Task,
    #[serde(default)]
    pub data: PairCorpusConfig,
}

/// `degrade`: the task's default model, optionally with another noise
/// level, or a fully spelled-out spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeRun {
    pub task: Task,
    pub seed: u64,
    pub noise_sigma: Option<f64>,
    pub spec: Option<DegradationSpec>,
}

impl Default for DegradeRun {
    fn default() -> Self {
        DegradeRun { task: Task::Isotropic, seed: 0, noise_sigma: None, spec: None }
    }
}

impl DegradeRun {
    pub fn spec(&self) -> DegradationSpec {
        if let Some(s) = &self.spec {
            return s.clone();
        }
        let s = DegradationSpec::for_task(self.task, self.seed);
        match self.noise_sigma {
            Some(sigma) => s.with_noise(sigma, self.seed),
            None => s,
        }
    }
}

/// `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub train: TrainConfig,
    /// Phantom pairs used when `train_dir` is not set.
    pub data: PairCorpusConfig,
    /// Paired directories with `lr/` and `hr/` subdirectories.
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub vgg_checkpoint: Option<PathBuf>,
    /// Write `step_NNNNNN.ckpt` every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Validate every this many steps; 0 validates only at the end.
    pub val_every: usize,
    pub ssim: SsimParams,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            train: TrainConfig::default(),
            data: PairCorpusConfig::default(),
            train_dir: None,
            val_dir: None,
            vgg_checkpoint: None,
            checkpoint_every: 0,
            val_every: 0,
            ssim: SsimParams::default(),
        }
    }
}

impl TrainRun {
    pub fn load(path: &Path) -> Result<Self> {
        let mut run: TrainRun = load_json(path)?;
        resolve(path, &mut run.train_dir);
        resolve(path, &mut run.val_dir);
        resolve(path, &mut run.vgg_checkpoint);
        Ok(run)
    }
}

/// `eval`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRun {
    /// Row label; defaults to the checkpoint file stem.
    pub experiment: Option<String>,
    /// Also emit the tricubic baseline row.
    pub baseline: bool,
    pub ssim: SsimParams,
}
