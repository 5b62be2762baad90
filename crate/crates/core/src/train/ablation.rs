use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{
    class_corpus, evaluate_generator, interpolation_row, phantom_splits, pretrain_vgg, ClassCorpusConfig, GanTrainer, MetricsRow,
    Pair, PairCorpusConfig, Split, TrainConfig, VggTrainConfig,
};
use crate::degradation::{DegradationSpec, Task};
use crate::error::{Error, Result};
use crate::metrics::SsimParams;
use crate::nn::{DiscriminatorConfig, DiscriminatorKind, GeneratorConfig, GeneratorKind, Network, VggConfig};
use crate::resample::InterpMode;

/// Name of the interpolation baseline row.
pub const BASELINE_NAME: &str = "Bicubic";

/// One learned configuration of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub generator: GeneratorKind,
    pub discriminator: Option<DiscriminatorKind>,
    pub perceptual: bool,
}

impl CellSpec {
    /// Row label, e.g. `SRResNet + PD + PL` or `SRResNet (MSE)`.
    pub fn name(&self) -> String {
        let mut s = String::from(self.generator.display_name());
        if let Some(d) = self.discriminator {
            s.push_str(" + ");
            s.push_str(d.display_name());
        }
        if self.perceptual {
            s.push_str(" + PL");
        }
        if self.discriminator.is_none() && !self.perceptual {
            s.push_str(" (MSE)");
        }
        s
    }

    /// {SRResNet, RDN} x {SD, PD} x {without, with PL}, then the MSE-only
    /// SRResNet.
    pub fn full_grid() -> Vec<CellSpec> {
        let mut cells = Vec::new();
        for generator in [GeneratorKind::Srresnet, GeneratorKind::Rdn] {
            for perceptual in [false, true] {
                for d in [DiscriminatorKind::Sd, DiscriminatorKind::Pd] {
                    cells.push(CellSpec { generator, discriminator: Some(d), perceptual });
                }
            }
        }
        cells.push(CellSpec { generator: GeneratorKind::Srresnet, discriminator: None, perceptual: false });
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub tasks: Vec<Task>,
    pub cells: Vec<CellSpec>,
    /// Shared by every cell of a task.
    pub data: PairCorpusConfig,
    /// Template for every cell; generator kind, scales, discriminator,
    /// perceptual flag and task are filled in per cell.
    pub train: TrainConfig,
    pub discriminator_channels: usize,
    pub vgg_train: VggTrainConfig,
    pub vgg_corpus: ClassCorpusConfig,
    pub ssim: SsimParams,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            tasks: vec![Task::Isotropic, Task::Anisotropic],
            cells: CellSpec::full_grid(),
            data: PairCorpusConfig { hr_extent: [32; 3], train: 16, val: 0, test: 4, ..Default::default() },
            train: TrainConfig {
                generator: GeneratorConfig {
                    base_channels: 8,
                    num_blocks: 2,
                    reduce_channels: 8,
                    rdn_layers_per_block: 2,
                    rdn_growth: 4,
                    ..Default::default()
                },
                lr: 1e-3,
                batch_size: 2,
                steps: 30,
                ..Default::default()
            },
            discriminator_channels: 4,
            vgg_train: VggTrainConfig { vgg: VggConfig { first_channels: 4 }, steps: 60, ..Default::default() },
            vgg_corpus: ClassCorpusConfig { counts: [8, 8, 40], ..Default::default() },
            ssim: SsimParams::default(),
        }
    }
}

impl AblationConfig {
    /// Training configuration of one cell.
    pub fn cell_config(&self, cell: &CellSpec, task: Task) -> TrainConfig {
        let factors = task.factors();
        let mut cfg = self.train.clone();
        cfg.task = task;
        cfg.degradation = None;
        cfg.generator.kind = cell.generator;
        cfg.generator.scale = factors;
        cfg.use_perceptual = cell.perceptual;
        cfg.discriminator = cell.discriminator.map(|kind| DiscriminatorConfig {
            kind,
            base_channels: self.discriminator_channels,
            scale: factors,
            hr_extent: self.data.hr_extent,
            spectral_norm: false,
        });
        cfg
    }

    fn degradation(&self, task: Task) -> DegradationSpec {
        DegradationSpec::for_task(task, self.data.seed)
    }
}

fn train_cell(cfg: TrainConfig, vgg: Option<Network<f32>>, train: &[Pair]) -> Result<Network<f32>> {
    let steps = cfg.steps;
    let mut trainer = GanTrainer::new(cfg, vgg)?;
    for _ in 0..steps {
        let rec = trainer.train_step(train)?;
        if !rec.g_total.is_finite() {
            return Err(Error::NonFinite { op: "generator objective" });
        }
    }
    Ok(trainer.into_generator())
}

/// Train and evaluate every cell for every task; each task contributes the
/// baseline row followed by one row per cell. A failing cell yields an
/// error row and the run continues. `vgg` is pretrained on demand when a
/// cell needs it and none is given.
pub fn run_ablation(
    cfg: &AblationConfig,
    vgg: Option<Network<f32>>,
    progress: &mut dyn FnMut(&MetricsRow, Option<&Error>),
) -> Result<Vec<MetricsRow>> {
    let needs_vgg = cfg.cells.iter().any(|c| c.perceptual);
    let vgg: core::result::Result<Option<Network<f32>>, Error> = match vgg {
        Some(v) => Ok(Some(v)),
        None if needs_vgg => class_corpus(&cfg.vgg_corpus, cfg.vgg_corpus.counts, Split::Train)
            .and_then(|corpus| pretrain_vgg(&cfg.vgg_train, &corpus, &mut |_| {}))
            .map(Some),
        None => Ok(None),
    };
    let mut rows = Vec::new();
    for &task in &cfg.tasks {
        let splits = phantom_splits(&cfg.data, &cfg.degradation(task))?;
        let mut emit = |row: MetricsRow, err: Option<Error>| {
            progress(&row, err.as_ref());
            rows.push(row);
        };
        match interpolation_row(BASELINE_NAME, task, &splits.test, InterpMode::Tricubic, &cfg.ssim) {
            Ok(row) => emit(row, None),
            Err(e) => emit(MetricsRow::failed(BASELINE_NAME, task), Some(e)),
        }
        for cell in &cfg.cells {
            let name = cell.name();
            let cell_vgg = match (&vgg, cell.perceptual) {
                (Ok(v), true) => Ok(v.clone()),
                (Err(e), true) => Err(e.clone()),
                (_, false) => Ok(None),
            };
            let result = cell_vgg
                .and_then(|v| train_cell(cfg.cell_config(cell, task), v, &splits.train))
                .and_then(|mut g| evaluate_generator(&mut g, &name, task, &splits.test, &cfg.ssim));
            match result {
                Ok(row) => emit(row, None),
                Err(e) => emit(MetricsRow::failed(name, task), Some(e)),
            }
        }
    }
    Ok(rows)
}
