//! Phantom corpora: paired LR/HR patches for super-resolution and labelled
//! volumes for classifier pretraining. Splits use disjoint seed streams.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::degradation::{degrade, mix_seed, patch_spec, DegradationSpec};
use crate::error::{Error, Result};
use crate::phantom::{make_phantom, PhantomSpec};
use crate::volume::{ClassLabel, Volume};

/// A low-resolution input and its high-resolution target.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub lr: Volume,
    pub hr: Volume,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1 << 32,
            Split::Test => 2 << 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairCorpusConfig {
    pub seed: u64,
    pub hr_extent: [usize; 3],
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub ellipsoid_count: usize,
    pub texture_amplitude: f64,
}

impl Default for PairCorpusConfig {
    fn default() -> Self {
        PairCorpusConfig { seed: 7, hr_extent: [16; 3], train: 64, val: 8, test: 8, ellipsoid_count: 4, texture_amplitude: 0.05 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSplits {
    pub train: Vec<Pair>,
    pub val: Vec<Pair>,
    pub test: Vec<Pair>,
}

fn phantom_spec(seed: u64, split: Split, i: usize, extents: [usize; 3], ellipsoids: usize, texture: f64) -> PhantomSpec {
    PhantomSpec {
        seed: mix_seed(seed, split.stream() + i as u64),
        class_kind: ClassLabel::ALL[i % 3],
        extents,
        ellipsoid_count: ellipsoids,
        texture_amplitude: texture,
    }
}

/// One phantom per pair, rendered at the HR patch extent and degraded with
/// a per-pair noise seed.
pub fn phantom_pairs(cfg: &PairCorpusConfig, spec: &DegradationSpec, split: Split) -> Result<Vec<Pair>> {
    let count = match split {
        Split::Train => cfg.train,
        Split::Val => cfg.val,
        Split::Test => cfg.test,
    };
    (0..count)
        .map(|i| {
            let hr = make_phantom(&phantom_spec(cfg.seed, split, i, cfg.hr_extent, cfg.ellipsoid_count, cfg.texture_amplitude))?;
            let lr = degrade(&hr, &patch_spec(spec, (split.stream() as usize).wrapping_add(i)))?;
            Ok(Pair { lr, hr })
        })
        .collect()
}

pub fn phantom_splits(cfg: &PairCorpusConfig, spec: &DegradationSpec) -> Result<PairSplits> {
    Ok(PairSplits {
        train: phantom_pairs(cfg, spec, Split::Train)?,
        val: phantom_pairs(cfg, spec, Split::Val)?,
        test: phantom_pairs(cfg, spec, Split::Test)?,
    })
}

/// Check that every pair matches `factors` (HR extent = LR extent x factors).
pub fn check_pairs(pairs: &[Pair], factors: [usize; 3]) -> Result<()> {
    for p in pairs {
        let (l, h) = (p.lr.extents(), p.hr.extents());
        if (0..3).any(|a| l[a] * factors[a] != h[a]) {
            return Err(Error::GridMismatch { hr: h, lr: l, scale: factors });
        }
    }
    Ok(())
}

/// Labelled phantoms for classifier pretraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassCorpusConfig {
    pub seed: u64,
    pub extent: [usize; 3],
    /// Volumes per class in the order t1, flair, diffusion.
    pub counts: [usize; 3],
    pub ellipsoid_count: usize,
    pub texture_amplitude: f64,
}

impl Default for ClassCorpusConfig {
    fn default() -> Self {
        ClassCorpusConfig { seed: 11, extent: [32; 3], counts: [23, 23, 250], ellipsoid_count: 4, texture_amplitude: 0.05 }
    }
}

/// Volumes grouped by class, each class drawn from its own seed stream.
/// `split` keeps training and evaluation corpora disjoint.
pub fn class_corpus(cfg: &ClassCorpusConfig, counts: [usize; 3], split: Split) -> Result<Vec<Volume>> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (c, class) in ClassLabel::ALL.into_iter().enumerate() {
        for i in 0..counts[c] {
            let spec = PhantomSpec {
                seed: mix_seed(cfg.seed, split.stream() + ((c as u64) << 24) + i as u64),
                class_kind: class,
                extents: cfg.extent,
                ellipsoid_count: cfg.ellipsoid_count,
                texture_amplitude: cfg.texture_amplitude,
            };
            out.push(make_phantom(&spec)?);
        }
    }
    Ok(out)
}
