//! Optimization loops: the alternating GAN trainer, classifier
//! pretraining, evaluation and the ablation grid.
//!
//! Everything here is a pure function of its configuration and seeds.
//! Mini-batches are drawn by a generator seeded from `(seed, step)`, so a
//! run resumed from a [`Snapshot`] continues exactly like an uninterrupted
//! one.

mod ablation;
mod data;
mod eval;
mod vgg;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degradation::{mix_seed, DegradationSpec, Task};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{adv_loss_d, generator_objective, LossWeights};
use crate::metrics::SsimParams;
use crate::nn::{DiscriminatorConfig, DiscriminatorKind, GeneratorConfig, Network};
use crate::ops::NormMode;
use crate::optim::{Adam, AdamConfig, StepOutcome};
use crate::tensor::Tensor;
use crate::volume::Volume;

pub use ablation::{run_ablation, AblationConfig, CellSpec, BASELINE_NAME};
pub use data::{
    check_pairs, class_corpus, phantom_pairs, phantom_splits, ClassCorpusConfig, Pair, PairCorpusConfig, PairSplits, Split,
};
pub use eval::{evaluate_generator, evaluate_with, interpolation_row, super_resolve, MetricsRow, RowStatus};
pub use vgg::{class_accuracy, classify, pretrain_vgg, ClassAccuracy, VggRecord, VggTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    /// `None` trains the generator on the pixel (and perceptual) terms only.
    pub discriminator: Option<DiscriminatorConfig>,
    pub use_perceptual: bool,
    pub weights: LossWeights,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub task: Task,
    /// Defaults to [`DegradationSpec::for_task`] seeded with `seed`.
    pub degradation: Option<DegradationSpec>,
    /// Class-balance beta for classifier pretraining.
    pub cb_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            generator: GeneratorConfig::default(),
            discriminator: None,
            use_perceptual: false,
            weights: LossWeights::default(),
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            steps: 500,
            seed: 0,
            task: Task::Isotropic,
            degradation: None,
            cb_beta: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn degradation_spec(&self) -> DegradationSpec {
        self.degradation.clone().unwrap_or_else(|| DegradationSpec::for_task(self.task, self.seed))
    }

    /// Weights with the adversarial term dropped when there is no
    /// discriminator and the perceptual term dropped when it is disabled.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights.clone();
        if self.discriminator.is_none() {
            w.lambda_adv = 0.0;
        }
        if !self.use_perceptual {
            w.lambda_perc = 0.0;
        }
        w
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("lr must be > 0".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.cb_beta) {
            return Err(Error::Config("cb_beta must lie in [0, 1)".into()));
        }
        let factors = self.task.factors();
        let spec = self.degradation_spec();
        spec.validate()?;
        if spec.factors != factors {
            return Err(Error::Config(format!(
                "degradation factors {:?} do not match the {} task {:?}",
                spec.factors,
                self.task.as_str(),
                factors
            )));
        }
        self.generator.validate()?;
        if self.generator.scale != factors {
            return Err(Error::Config(format!("generator scale {:?} does not match the task factors {:?}", self.generator.scale, factors)));
        }
        if let Some(d) = &self.discriminator {
            d.validate()?;
            if d.kind == DiscriminatorKind::Pd && d.scale != factors {
                return Err(Error::Config(format!("discriminator scale {:?} does not match the task factors {:?}", d.scale, factors)));
            }
        }
        self.effective_weights().validate()
    }
}

/// Unweighted loss terms of one training step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub g_total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_pixel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_perc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_loss: Option<f64>,
    /// Generator update skipped because of non-finite gradients.
    #[serde(skip_serializing_if = "core::ops::Not::not", default)]
    pub g_skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_skipped: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Everything needed to resume training: configuration, counters and named
/// tensors (parameters, batch-norm statistics, Adam moments).
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub config: TrainConfig,
    pub step: u64,
    pub adam_steps_g: u64,
    pub adam_steps_d: Option<u64>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Snapshot {
    /// The generator alone, ready for inference.
    pub fn generator(&self) -> Result<Network<f32>> {
        let mut net = Network::generator(&self.config.generator)?;
        let state: Vec<(String, Tensor<f32>)> = self
            .tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("generator.").filter(|r| !r.starts_with("adam_")).map(|r| (r.into(), t.clone())))
            .collect();
        net.load_state(&state)?;
        Ok(net)
    }
}

pub struct GanTrainer {
    config: TrainConfig,
    weights: LossWeights,
    generator: Network<f32>,
    discriminator: Option<Network<f32>>,
    vgg: Option<Network<f32>>,
    opt_g: Adam<f32>,
    opt_d: Option<Adam<f32>>,
    step: u64,
}

/// Indices of the mini-batch drawn at `step`.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, 3), step));
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

impl GanTrainer {
    /// Fresh networks initialized from the config seed. `vgg` is the frozen
    /// feature network, required when the perceptual term is active.
    pub fn new(config: TrainConfig, vgg: Option<Network<f32>>) -> Result<Self> {
        config.validate()?;
        let weights = config.effective_weights();
        if weights.lambda_perc > 0.0 && vgg.is_none() {
            return Err(Error::Config("use_perceptual needs a pretrained VGG".into()));
        }
        let mut generator = Network::generator(&config.generator)?;
        generator.init_params(mix_seed(config.seed, 1));
        let discriminator = match &config.discriminator {
            Some(d) => {
                let mut net = Network::discriminator(d)?;
                net.init_params(mix_seed(config.seed, 2));
                Some(net)
            }
            None => None,
        };
        let adam = config.adam();
        let opt_g = Adam::new(adam, generator.params());
        let opt_d = discriminator.as_ref().map(|d| Adam::new(adam, d.params()));
        Ok(GanTrainer { config, weights, generator, discriminator, vgg, opt_g, opt_d, step: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }
    pub fn step(&self) -> u64 {
        self.step
    }
    pub fn generator(&self) -> &Network<f32> {
        &self.generator
    }
    pub fn generator_mut(&mut self) -> &mut Network<f32> {
        &mut self.generator
    }
    pub fn discriminator(&self) -> Option<&Network<f32>> {
        self.discriminator.as_ref()
    }
    pub fn into_generator(self) -> Network<f32> {
        self.generator
    }

    /// One discriminator update followed by one generator update on the
    /// mini-batch drawn for the current step.
    pub fn train_step(&mut self, train: &[Pair]) -> Result<StepRecord> {
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        check_pairs(train, self.config.task.factors())?;
        let idx = batch_indices(self.config.seed, self.step, self.config.batch_size, train.len());
        let lr_t: Tensor<f32> = Volume::batch(idx.iter().map(|i| &train[*i].lr))?;
        let hr_t: Tensor<f32> = Volume::batch(idx.iter().map(|i| &train[*i].hr))?;

        let mut g = Graph::new();
        let gb = self.generator.bind(&mut g, true);
        let lr = g.constant(lr_t.clone());
        let hr = g.constant(hr_t.clone());
        let sr = self.generator.generator_forward(&mut g, &gb, lr, NormMode::Train)?;

        let mut record = StepRecord { step: self.step, lr: self.config.lr, ..Default::default() };
        let mut fake_logits = None;
        if let (Some(disc), Some(opt_d)) = (self.discriminator.as_mut(), self.opt_d.as_mut()) {
            let mut gd = Graph::new();
            let db = disc.bind(&mut gd, true);
            let sr_d = gd.constant(g.value(sr).clone().with_requires_grad(false));
            let hr_d = gd.constant(hr_t);
            let lr_d = gd.constant(lr_t);
            let real = disc.discriminate(&mut gd, &db, hr_d, lr_d, NormMode::Train)?;
            let fake = disc.discriminate(&mut gd, &db, sr_d, lr_d, NormMode::Train)?;
            let ld = adv_loss_d(&mut gd, real, fake)?;
            gd.backward(ld)?;
            let outcome = opt_d.step(disc.params_mut(), &db.grads(&gd)?)?;
            record.d_loss = Some(gd.item(ld) as f64);
            record.d_skipped = Some(outcome == StepOutcome::SkippedNonFinite);

            if self.weights.lambda_adv > 0.0 {
                let frozen = disc.bind(&mut g, false);
                fake_logits = Some(disc.discriminate(&mut g, &frozen, sr, lr, NormMode::Train)?);
            }
        }
        let terms = generator_objective(&mut g, sr, hr, fake_logits, self.vgg.as_mut(), &self.weights)?;
        g.backward(terms.total)?;
        let outcome = self.opt_g.step(self.generator.params_mut(), &gb.grads(&g)?)?;
        let v = terms.values(&g);
        record.g_total = v.total;
        record.g_pixel = v.pixel;
        record.g_adv = v.adversarial;
        record.g_perc = v.perceptual;
        record.g_skipped = outcome == StepOutcome::SkippedNonFinite;
        self.step += 1;
        Ok(record)
    }

    /// Mean MSE, PSNR and SSIM of the generator (eval mode) over `val`.
    pub fn validate(&mut self, val: &[Pair], ssim: &SsimParams) -> Result<ValMetrics> {
        eval::val_metrics(&mut self.generator, val, ssim)
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut tensors = Vec::new();
        push_net(&mut tensors, "generator", &self.generator, &self.opt_g);
        if let (Some(d), Some(o)) = (&self.discriminator, &self.opt_d) {
            push_net(&mut tensors, "discriminator", d, o);
        }
        Snapshot {
            config: self.config.clone(),
            step: self.step,
            adam_steps_g: self.opt_g.steps(),
            adam_steps_d: self.opt_d.as_ref().map(|o| o.steps()),
            tensors,
        }
    }

    /// Rebuild a trainer from a snapshot. Every tensor must be present.
    pub fn from_snapshot(snapshot: &Snapshot, vgg: Option<Network<f32>>) -> Result<Self> {
        let mut t = GanTrainer::new(snapshot.config.clone(), vgg)?;
        let mut lookup: alloc::collections::BTreeMap<&str, &Tensor<f32>> = alloc::collections::BTreeMap::new();
        for (name, tensor) in &snapshot.tensors {
            if lookup.insert(name.as_str(), tensor).is_some() {
                return Err(Error::Config(format!("duplicate tensor {name} in snapshot")));
            }
        }
        let used = restore_net(&lookup, "generator", &mut t.generator, &mut t.opt_g, snapshot.adam_steps_g)?;
        let mut total = used;
        if let (Some(d), Some(o)) = (t.discriminator.as_mut(), t.opt_d.as_mut()) {
            let steps = snapshot.adam_steps_d.ok_or(Error::Config("snapshot lacks discriminator state".into()))?;
            total += restore_net(&lookup, "discriminator", d, o, steps)?;
        }
        if total != lookup.len() {
            return Err(Error::Config("snapshot holds tensors the configuration does not use".into()));
        }
        t.step = snapshot.step;
        Ok(t)
    }
}

fn push_net(out: &mut Vec<(String, Tensor<f32>)>, prefix: &str, net: &Network<f32>, opt: &Adam<f32>) {
    for e in net.params().entries() {
        out.push((format!("{prefix}.param.{}", e.name), e.tensor.clone().with_requires_grad(false)));
    }
    for e in net.buffers().entries() {
        out.push((format!("{prefix}.buffer.{}", e.name), e.tensor.clone()));
    }
    for (kind, moments) in [("adam_m", opt.first_moments()), ("adam_v", opt.second_moments())] {
        for (e, m) in net.params().entries().iter().zip(moments) {
            let t = Tensor::new(e.tensor.shape(), m.clone()).expect("moments match parameter shapes");
            out.push((format!("{prefix}.{kind}.{}", e.name), t));
        }
    }
}

fn restore_net(
    lookup: &alloc::collections::BTreeMap<&str, &Tensor<f32>>,
    prefix: &str,
    net: &mut Network<f32>,
    opt: &mut Adam<f32>,
    adam_steps: u64,
) -> Result<usize> {
    let fetch = |name: String, shape: crate::tensor::Shape| -> Result<Tensor<f32>> {
        let t = lookup.get(name.as_str()).ok_or_else(|| Error::UnknownParam(name.clone()))?;
        if t.shape() != shape {
            return Err(Error::Config(format!("tensor {name} has shape {:?}, expected {:?}", t.shape().0, shape.0)));
        }
        Ok((*t).clone())
    };
    let mut used = 0;
    let names: Vec<(String, crate::tensor::Shape)> =
        net.params().entries().iter().map(|e| (e.name.clone(), e.tensor.shape())).collect();
    for (name, shape) in &names {
        net.params_mut().set(name, fetch(format!("{prefix}.param.{name}"), *shape)?)?;
        used += 1;
    }
    let buffers: Vec<(String, crate::tensor::Shape)> =
        net.buffers().entries().iter().map(|e| (e.name.clone(), e.tensor.shape())).collect();
    for (name, shape) in &buffers {
        net.buffers_mut().set(name, fetch(format!("{prefix}.buffer.{name}"), *shape)?)?;
        used += 1;
    }
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, shape) in &names {
        m.push(fetch(format!("{prefix}.adam_m.{name}"), *shape)?.into_data());
        v.push(fetch(format!("{prefix}.adam_v.{name}"), *shape)?.into_data());
        used += 2;
    }
    opt.restore(adam_steps, m, v)?;
    Ok(used)
}
