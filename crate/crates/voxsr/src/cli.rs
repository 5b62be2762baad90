//! Command-line definition and dispatch.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use voxsr_core::degradation::{degrade, Task};
use voxsr_core::gradcheck::run_suite;
use voxsr_core::phantom::make_phantom;
use voxsr_core::train::{
    class_accuracy, class_corpus, evaluate_generator, interpolation_row, phantom_splits, run_ablation, super_resolve,
    AblationConfig, CellSpec, RowStatus, Split, BASELINE_NAME,
};
use voxsr_core::resample::InterpMode;
use voxsr_core::ClassLabel;

use crate::checkpoint::Checkpoint;
use crate::config::{load_json, DegradeRun, EvalRun, PhantomRun, TrainRun};
use crate::error::{CliError, Result};
use crate::runner::{create_dir, load_vgg, read_labelled_dir, read_pairs_dir, run_pretraining, run_training, write_pairs_dir};
use crate::table::{format_table, read_csv, write_csv};
use crate::volfile::{list_vols, read_vol, write_vol};

#[derive(Debug, Parser)]
#[command(name = "voxsr", version, about = "Volumetric super-resolution with 3D GANs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Isotropic,
    Anisotropic,
    Both,
}

impl TaskArg {
    pub fn tasks(self) -> Vec<Task> {
        match self {
            TaskArg::Isotropic => vec![Task::Isotropic],
            TaskArg::Anisotropic => vec![Task::Anisotropic],
            TaskArg::Both => vec![Task::Isotropic, Task::Anisotropic],
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantom volumes, a labelled class corpus and/or LR/HR pairs.
    Phantom {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blur, decimate and add noise to a volume (or every volume in a directory).
    Degrade {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the 3D VGG classifier on a directory of labelled volumes.
    PretrainVgg {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Labelled held-out volumes for the final balanced accuracy.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a generator (and discriminator) from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a paired directory and emit CSV rows.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Super-resolve one LR volume.
    Superres {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every op, loss and network.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate the ablation grid.
    Ablate {
        /// Base settings (data, training template, classifier); desk-scale defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `full` or a JSON list of cells.
        #[arg(long, default_value = "full")]
        grid: String,
        #[arg(long, value_enum, default_value_t = TaskArg::Both)]
        task: TaskArg,
        /// Pretrained classifier for the perceptual cells.
        #[arg(long)]
        vgg: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Format a metrics CSV as a table.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { config, out } => phantom(&config, &out),
        Command::Degrade { config, input, out } => {
            let run: DegradeRun = match config {
                Some(p) => load_json(&p)?,
                None => DegradeRun::default(),
            };
            degrade_cmd(&run, &input, &out)
        }
        Command::PretrainVgg { config, data, eval, out } => {
            let cfg = match config {
                Some(p) => load_json(&p)?,
                None => Default::default(),
            };
            let corpus = read_labelled_dir(&data)?;
            let ckpt = run_pretraining(&cfg, &corpus, &mut |r| {
                let [a, b, c] = r.accuracy.per_class;
                eprintln!("step {:>5}  loss {:.4}  acc t1 {a:.3} flair {b:.3} diffusion {c:.3}  balanced {:.3}", r.step, r.loss, r.accuracy.balanced);
            })?;
            if let Some(dir) = eval {
                let held_out = read_labelled_dir(&dir)?;
                let acc = class_accuracy(&mut ckpt.network()?, &held_out)?;
                println!("held-out balanced accuracy {:.4}", acc.balanced);
            }
            Checkpoint::Vgg(ckpt).save(&out)?;
            Ok(())
        }
        Command::Train { config, out, resume } => {
            let run = TrainRun::load(&config)?;
            let resume = match resume {
                Some(p) => Some(Checkpoint::load(&p)?.into_gan()?),
                None => None,
            };
            let every = (run.train.steps / 20).max(1) as u64;
            let outcome = run_training(&run, &out, resume, &mut |rec| {
                if let Some(v) = &rec.val {
                    eprintln!("step {:>6}  val mse {:.6}  psnr {:.2} dB  ssim {:.4}", rec.step, v.mse, v.psnr_db, v.ssim);
                } else if let Some(t) = rec.terms.as_ref().filter(|_| (rec.step + 1) % every == 0) {
                    eprintln!("step {:>6}  g_total {:.6}", rec.step + 1, t.g_total);
                }
            })?;
            if let Some(v) = outcome.final_val {
                println!("final val psnr {:.4} dB  ssim {:.4}", v.psnr_db, v.ssim);
            }
            Ok(())
        }
        Command::Eval { checkpoint, data, config, out } => {
            let run: EvalRun = match config {
                Some(p) => load_json(&p)?,
                None => EvalRun::default(),
            };
            let snap = Checkpoint::load(&checkpoint)?.into_gan()?;
            let task = snap.config.task;
            let pairs = read_pairs_dir(&data)?;
            let name = run.experiment.clone().unwrap_or_else(|| checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
            let mut rows = Vec::new();
            if run.baseline {
                rows.push(interpolation_row(BASELINE_NAME, task, &pairs, InterpMode::Tricubic, &run.ssim)?);
            }
            rows.push(evaluate_generator(&mut snap.generator()?, &name, task, &pairs, &run.ssim)?);
            match out {
                Some(p) => {
                    let mut buf = Vec::new();
                    write_csv(&rows, &mut buf)?;
                    write_file(&p, &buf)?;
                    print!("{}", format_table(&rows));
                }
                None => write_csv(&rows, std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Superres { checkpoint, input, out } => {
            let mut g = Checkpoint::load(&checkpoint)?.into_gan()?.generator()?;
            let lr = read_vol(&input)?;
            let sr = super_resolve(&mut g, &lr)?;
            write_vol(&sr, &out)?;
            Ok(())
        }
        Command::Gradcheck { seed } => gradcheck(seed),
        Command::Ablate { config, grid, task, vgg, out } => ablate(config.as_deref(), &grid, task, vgg.as_deref(), &out),
        Command::Report { input, out } => {
            let file = fs::File::open(&input).map_err(CliError::io(&input))?;
            let table = format_table(&read_csv(file)?);
            match out {
                Some(p) => write_file(&p, table.as_bytes()),
                None => {
                    print!("{table}");
                    Ok(())
                }
            }
        }
    }
}

fn phantom(config: &Path, out: &Path) -> Result<()> {
    let run: PhantomRun = load_json(config)?;
    create_dir(out)?;
    let mut written = 0usize;
    for (i, spec) in run.phantoms.iter().enumerate() {
        let v = make_phantom(spec)?.with_label(Some(spec.class_kind));
        write_vol(&v, out.join(format!("phantom_{i:04}_{}.vol", spec.class_kind.as_str())))?;
        written += 1;
    }
    if let Some(cc) = &run.class_corpus {
        let corpus = class_corpus(cc, cc.counts, Split::Train)?;
        let dir = out.join("classes");
        create_dir(&dir)?;
        let mut seen = [0usize; 3];
        for v in &corpus {
            let label = v.label().unwrap_or(ClassLabel::T1);
            let k = &mut seen[label.index()];
            write_vol(v, dir.join(format!("{}_{:04}.vol", label.as_str(), *k)))?;
            *k += 1;
        }
        written += corpus.len();
    }
    if let Some(p) = &run.pairs {
        let splits = phantom_splits(&p.data, &voxsr_core::degradation::DegradationSpec::for_task(p.task, p.data.seed))?;
        for (name, pairs) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
            if !pairs.is_empty() {
                write_pairs_dir(&out.join(name), pairs)?;
                written += 2 * pairs.len();
            }
        }
    }
    eprintln!("wrote {written} volumes to {}", out.display());
    Ok(())
}

fn degrade_cmd(run: &DegradeRun, input: &Path, out: &Path) -> Result<()> {
    let spec = run.spec();
    spec.validate()?;
    if input.is_dir() {
        create_dir(out)?;
        for p in list_vols(input)? {
            let name = p.file_name().map(PathBuf::from).unwrap_or_default();
            write_vol(&degrade(&read_vol(&p)?, &spec)?, out.join(name))?;
        }
        Ok(())
    } else {
        let lr = degrade(&read_vol(input)?, &spec)?;
        write_vol(&lr, out)?;
        Ok(())
    }
}

fn gradcheck(seed: u64) -> Result<()> {
    let entries = run_suite(seed)?;
    let width = entries.iter().map(|e| e.name.len()).max().unwrap_or(4);
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    let _ = writeln!(out, "{:width$}  {:>12}  {:>9}  {:>7}  {:>7}  status", "check", "max_rel_err", "tolerance", "coords", "skipped");
    for e in &entries {
        let ok = e.max_rel_error < e.tolerance;
        if !ok {
            failed.push(e.name.clone());
        }
        let _ = writeln!(
            out,
            "{:width$}  {:>12.3e}  {:>9.0e}  {:>7}  {:>7}  {}",
            e.name,
            e.max_rel_error,
            e.tolerance,
            e.coords_checked,
            e.coords_skipped,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_TABLE: &str = "ablation.txt";

fn ablate(config: Option<&Path>, grid: &str, task: TaskArg, vgg: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg: AblationConfig = match config {
        Some(p) => load_json(p)?,
        None => AblationConfig::default(),
    };
    cfg.cells = if grid == "full" { CellSpec::full_grid() } else { load_json(Path::new(grid))? };
    cfg.tasks = task.tasks();
    let vgg = match vgg {
        Some(p) => Some(load_vgg(p)?),
        None => None,
    };
    let rows = run_ablation(&cfg, vgg, &mut |row, err| match err {
        Some(e) => eprintln!("{} [{}]: error: {e}", row.experiment, row.task.as_str()),
        None => eprintln!("{} [{}]: ssim {:.4}  psnr {:.2} dB", row.experiment, row.task.as_str(), row.ssim, row.psnr_db),
    })?;
    let mut csv = Vec::new();
    write_csv(&rows, &mut csv)?;
    write_file(&out.join(ABLATION_CSV), &csv)?;
    let table = format_table(&rows);
    write_file(&out.join(ABLATION_TABLE), table.as_bytes())?;
    print!("{table}");
    let failed = rows.iter().filter(|r| r.status == RowStatus::Error).count();
    if failed > 0 {
        return Err(CliError::Validation(format!("{failed} of {} rows failed", rows.len())));
    }
    Ok(())
}
