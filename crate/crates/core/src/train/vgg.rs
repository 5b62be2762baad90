use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::batch_indices;
use crate::degradation::mix_seed;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{class_balanced_ce, CbLossParams};
use crate::nn::{Network, VggConfig};
use crate::ops::NormMode;
use crate::optim::{Adam, AdamConfig};
use crate::volume::{ClassLabel, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VggTrainConfig {
    pub vgg: VggConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub cb_beta: f64,
    pub seed: u64,
}

impl Default for VggTrainConfig {
    fn default() -> Self {
        VggTrainConfig {
            vgg: VggConfig::default(),
            steps: 300,
            batch_size: 8,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            cb_beta: 0.999,
            seed: 0,
        }
    }
}

/// Progress emitted once per pass over the corpus and after the last step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VggRecord {
    pub step: u64,
    pub loss: f64,
    pub accuracy: ClassAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    /// Accuracy per class (t1, flair, diffusion); NaN for absent classes.
    pub per_class: [f64; 3],
    /// Mean of the per-class accuracies of the classes present.
    pub balanced: f64,
}

fn label_of(v: &Volume) -> Result<usize> {
    v.label().map(ClassLabel::index).ok_or(Error::Config("classifier volumes need a class label".into()))
}

/// Predicted class indices in eval mode.
pub fn classify(net: &mut Network<f32>, volumes: &[Volume]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(volumes.len());
    for chunk in volumes.chunks(8) {
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(Volume::batch(chunk)?);
        let logits = net.vgg_forward(&mut g, &b, x, NormMode::Eval)?.out;
        for row in g.value(logits).data().chunks(3) {
            let best = (0..3).fold(0, |best, i| if row[i] > row[best] { i } else { best });
            out.push(best);
        }
    }
    Ok(out)
}

pub fn class_accuracy(net: &mut Network<f32>, volumes: &[Volume]) -> Result<ClassAccuracy> {
    let pred = classify(net, volumes)?;
    let mut hit = [0usize; 3];
    let mut total = [0usize; 3];
    for (v, p) in volumes.iter().zip(pred) {
        let y = label_of(v)?;
        total[y] += 1;
        hit[y] += (p == y) as usize;
    }
    let per_class = [0, 1, 2].map(|c| if total[c] == 0 { f64::NAN } else { hit[c] as f64 / total[c] as f64 });
    let present: Vec<f64> = per_class.iter().copied().filter(|a| !a.is_nan()).collect();
    let balanced = if present.is_empty() { f64::NAN } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok(ClassAccuracy { per_class, balanced })
}

/// Train the classifier with the class-balanced loss, counts taken from
/// the corpus. Every class needs at least two volumes.
pub fn pretrain_vgg(cfg: &VggTrainConfig, corpus: &[Volume], on_record: &mut dyn FnMut(&VggRecord)) -> Result<Network<f32>> {
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("steps and batch_size must be >= 1".into()));
    }
    if !(cfg.lr >= 0.0) {
        return Err(Error::Config("lr must be >= 0".into()));
    }
    let labels: Vec<usize> = corpus.iter().map(label_of).collect::<Result<_>>()?;
    let mut counts = [0usize; 3];
    for l in &labels {
        counts[*l] += 1;
    }
    for (c, n) in counts.iter().enumerate() {
        if *n < 2 {
            return Err(Error::MissingClass(alloc::format!(
                "class {} has {} volumes, at least 2 are required",
                ClassLabel::ALL[c].as_str(),
                n
            )));
        }
    }
    let params = CbLossParams::new(cfg.cb_beta, counts.to_vec())?;
    let mut net = Network::<f32>::vgg3d(&cfg.vgg)?;
    net.init_params(mix_seed(cfg.seed, 1));
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, beta1: cfg.adam_beta1, beta2: cfg.adam_beta2, eps: cfg.adam_eps }, net.params());
    let epoch = corpus.len().div_ceil(cfg.batch_size).max(1);
    for step in 0..cfg.steps {
        let idx = batch_indices(cfg.seed, step as u64, cfg.batch_size, corpus.len());
        let mut g = Graph::new();
        let b = net.bind(&mut g, true);
        let x = g.constant(Volume::batch(idx.iter().map(|i| &corpus[*i]))?);
        let y: Vec<usize> = idx.iter().map(|i| labels[*i]).collect();
        let logits = net.vgg_forward(&mut g, &b, x, NormMode::Train)?.out;
        let loss = class_balanced_ce(&mut g, logits, &y, &params)?;
        g.backward(loss)?;
        adam.step(net.params_mut(), &b.grads(&g)?)?;
        let last = step + 1 == cfg.steps;
        if (step + 1) % epoch == 0 || last {
            let accuracy = class_accuracy(&mut net, corpus)?;
            on_record(&VggRecord { step: step as u64 + 1, loss: g.item(loss) as f64, accuracy });
        }
    }
    Ok(net)
}
