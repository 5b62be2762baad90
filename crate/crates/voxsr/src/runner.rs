//! Drivers behind the subcommands: paired directories, the training run
//! with periodic checkpoints and validation, and classifier pretraining.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use voxsr_core::nn::Network;
use voxsr_core::train::{phantom_splits, pretrain_vgg, GanTrainer, Pair, PairSplits, Snapshot, VggRecord, VggTrainConfig};
use voxsr_core::Volume;

use crate::checkpoint::{Checkpoint, VggCheckpoint};
use crate::config::TrainRun;
use crate::error::{CliError, Result};
use crate::trainlog::LogRecord;
use crate::volfile::{list_vols, read_vol, write_vol};

pub const LOG_FILE: &str = "train_log.ndjson";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn step_checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.ckpt")
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Write pairs as `dir/lr/NNNN.vol` and `dir/hr/NNNN.vol`.
pub fn write_pairs_dir(dir: &Path, pairs: &[Pair]) -> Result<()> {
    for sub in ["lr", "hr"] {
        create_dir(&dir.join(sub))?;
    }
    for (i, p) in pairs.iter().enumerate() {
        let name = format!("{i:04}.vol");
        write_vol(&p.lr, dir.join("lr").join(&name))?;
        write_vol(&p.hr, dir.join("hr").join(&name))?;
    }
    Ok(())
}

/// Read a paired directory; `lr/` and `hr/` must hold the same file names.
pub fn read_pairs_dir(dir: &Path) -> Result<Vec<Pair>> {
    let lr = list_vols(dir.join("lr"))?;
    let hr = list_vols(dir.join("hr"))?;
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().map(|n| n.to_owned())).collect::<Vec<_>>();
    if names(&lr) != names(&hr) {
        return Err(CliError::Config { path: dir.into(), message: "lr/ and hr/ hold different file names".into() });
    }
    if lr.is_empty() {
        return Err(CliError::Config { path: dir.into(), message: "no .vol pairs found".into() });
    }
    lr.iter().zip(&hr).map(|(l, h)| Ok(Pair { lr: read_vol(l)?, hr: read_vol(h)? })).collect()
}

/// Every labelled volume in `dir`.
pub fn read_labelled_dir(dir: &Path) -> Result<Vec<Volume>> {
    let paths = list_vols(dir)?;
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let v = read_vol(&p)?;
        if v.label().is_none() {
            return Err(CliError::Config { path: p, message: "volume has no class label".into() });
        }
        out.push(v);
    }
    Ok(out)
}

pub fn load_vgg(path: &Path) -> Result<Network<f32>> {
    Ok(Checkpoint::load(path)?.into_vgg()?.network()?)
}

pub fn training_data(run: &TrainRun) -> Result<PairSplits> {
    match &run.train_dir {
        Some(dir) => {
            let train = read_pairs_dir(dir)?;
            let val = match &run.val_dir {
                Some(v) => read_pairs_dir(v)?,
                None => Vec::new(),
            };
            Ok(PairSplits { train, val, test: Vec::new() })
        }
        None => Ok(phantom_splits(&run.data, &run.train.degradation_spec())?),
    }
}

pub struct TrainOutcome {
    pub snapshot: Snapshot,
    pub final_val: Option<voxsr_core::train::ValMetrics>,
}

/// Train to `run.train.steps`, starting fresh or from `resume`. Writes the
/// NDJSON log (appended when resuming), periodic and final checkpoints into
/// `out`.
pub fn run_training(run: &TrainRun, out: &Path, resume: Option<Snapshot>, progress: &mut dyn FnMut(&LogRecord)) -> Result<TrainOutcome> {
    create_dir(out)?;
    let vgg = match &run.vgg_checkpoint {
        Some(p) => Some(load_vgg(p)?),
        None => None,
    };
    let data = training_data(run)?;
    let mut trainer = match &resume {
        Some(s) => {
            if s.config != run.train {
                return Err(CliError::Config { path: out.into(), message: "resume checkpoint was trained with a different config".into() });
            }
            GanTrainer::from_snapshot(s, vgg)?
        }
        None => GanTrainer::new(run.train.clone(), vgg)?,
    };
    let log_path = out.join(LOG_FILE);
    let file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(CliError::io(&log_path))?;
    let mut log = BufWriter::new(file);
    let started = Instant::now();
    let mut emit = |rec: LogRecord, log: &mut BufWriter<File>| -> Result<()> {
        rec.write_line(log).map_err(CliError::io(&log_path))?;
        progress(&rec);
        Ok(())
    };

    let total = run.train.steps as u64;
    let mut final_val = None;
    while trainer.step() < total {
        let rec = trainer.train_step(&data.train)?;
        emit(LogRecord::from_step(&rec, started.elapsed().as_millis() as u64), &mut log)?;
        let step = trainer.step();
        let last = step == total;
        if !data.val.is_empty() && (last || (run.val_every > 0 && step % run.val_every as u64 == 0)) {
            let v = trainer.validate(&data.val, &run.ssim)?;
            emit(LogRecord::from_val(step, v, started.elapsed().as_millis() as u64), &mut log)?;
            if last {
                final_val = Some(v);
            }
        }
        if run.checkpoint_every > 0 && step % run.checkpoint_every as u64 == 0 && !last {
            Checkpoint::Gan(trainer.snapshot()).save(out.join(step_checkpoint_name(step)))?;
        }
    }
    log.flush().map_err(CliError::io(&log_path))?;
    let snapshot = trainer.snapshot();
    Checkpoint::Gan(snapshot.clone()).save(out.join(FINAL_CHECKPOINT))?;
    Ok(TrainOutcome { snapshot, final_val })
}

pub fn run_pretraining(cfg: &VggTrainConfig, corpus: &[Volume], progress: &mut dyn FnMut(&VggRecord)) -> Result<VggCheckpoint> {
    let net = pretrain_vgg(cfg, corpus, progress)?;
    Ok(VggCheckpoint::from_network(&net, cfg))
}
