use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use spus::eval::{eval_dataset, rollout};
use spus::io::checkpoint::CHECKPOINT_MAGIC;
use spus::io::trajectory::{trajectory_header, TRAJECTORY_MAGIC};
use spus::io::{
    checkpoint_from_bytes, checkpoint_manifest, export_panel, export_snapshot, load_checkpoint, read_trajectory, save_checkpoint,
    write_trajectory,
};
use spus::model::{build_model, ModelConfig, CORE_FIELDS};
use spus::pde::{preset, Trajectory};
use spus::train::{finetune, metrics_csv, pretrain, NormMode, TrainConfig, DEFAULT_BATCH, DEFAULT_EPOCHS};
use spus::Error;

#[derive(Parser)]
#[command(name = "spus", version, about = "Residual U-Net surrogate for time-dependent PDEs")]
struct Cli {
    /// key=value file supplying defaults for the subcommand's flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories for a named dataset
    Generate(GenerateArgs),
    /// Pretrain a five-field model on one or more data directories
    Pretrain(TrainArgs),
    /// Fine-tune a checkpoint on a downstream data directory
    Finetune(FinetuneArgs),
    /// Autoregressive rollout from a trajectory's initial state
    Rollout(RolloutArgs),
    /// Rollout MSE report over a data directory, as CSV
    Eval(EvalArgs),
    /// Write one snapshot (or a prediction/truth/difference panel) as PGM or CSV
    Export(ExportArgs),
    /// Print the header of a checkpoint or trajectory file
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Dataset name, e.g. ce-rp, ns-sl, wave-gauss [default: ce-rp]
    #[arg(long)]
    dataset: Option<String>,
    /// Number of trajectories [default: 4]
    #[arg(long)]
    count: Option<usize>,
    /// Grid size H = W [default: 64]
    #[arg(long)]
    size: Option<usize>,
    /// First trajectory seed; trajectory i uses seed + i [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Snapshot intervals [default: 20, 14 for wave]
    #[arg(long)]
    intervals: Option<usize>,
    /// Physical time covered [default: per family]
    #[arg(long)]
    horizon: Option<f64>,
    /// Kinematic viscosity for Navier-Stokes [default: 1e-3]
    #[arg(long)]
    viscosity: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    /// Epochs [default: 200]
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size [default: 10]
    #[arg(long)]
    batch: Option<usize>,
    /// Initial learning rate, decayed linearly to zero [default: 1e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for initialization, split and shuffling [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of trajectories held out for evaluation [default: 0.1]
    #[arg(long)]
    eval_fraction: Option<f64>,
    /// zscore or off [default: zscore]
    #[arg(long)]
    norm: Option<String>,
    /// Output checkpoint path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch metrics CSV [default: <out>.metrics.csv]
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of .pdet files; repeat to pool several datasets
    #[arg(long)]
    data: Vec<PathBuf>,
    /// Level-0 channel width; the published layout uses 32 [default: 32]
    #[arg(long)]
    width: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Pretrained checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of task .pdet files
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use at most this many trajectories, in file-name order [default: all]
    #[arg(long)]
    max_trajectories: Option<usize>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Trajectory whose first snapshot seeds the rollout
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Steps to predict [default: snapshots - 1]
    #[arg(long)]
    steps: Option<usize>,
    /// Output trajectory holding X_0 followed by the predictions
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of test .pdet files
    #[arg(long)]
    data: Option<PathBuf>,
    /// Rollout steps [default: shortest trajectory - 1]
    #[arg(long)]
    steps: Option<usize>,
    /// Report MSE in physical units instead of normalized space
    #[arg(long)]
    raw: bool,
    /// CSV report path [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Trajectory (or rollout output) to read
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Ground-truth trajectory; writes a prediction/truth/difference panel
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Snapshot index [default: 0]
    #[arg(long)]
    step: Option<usize>,
    /// Field index [default: 0]
    #[arg(long)]
    field: Option<usize>,
    /// Output file; .csv writes a grid, anything else a binary PGM
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint (.spus) or trajectory (.pdet) file
    path: PathBuf,
}

/// A failure and the exit code it maps to.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Values from `--config`, consumed as flags are resolved.
struct Settings {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(e.into()))?;
            for (no, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Failure::Usage(format!("{}:{}: expected key=value", path.display(), no + 1))
                })?;
                values.insert(k.trim().replace('_', "-"), v.trim().to_string());
            }
        }
        Ok(Self { values, used: RefCell::new(BTreeSet::new()) })
    }

    /// Flag value, else config value, else `default`.
    fn get<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    fn opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| Failure::Usage(format!("config key `{key}`: {e}"))),
        }
    }

    fn require<T: FromStr>(&self, key: &str, flag: Option<T>) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.opt(key, flag)?.ok_or_else(|| Failure::Usage(format!("missing required --{key}")))
    }

    fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        match self.values.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(Failure::Usage(format!("unknown config key `{k}` for this subcommand"))),
            None => Ok(()),
        }
    }
}

fn read_dir(dir: &Path) -> CliResult<Vec<Trajectory>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::Runtime(e.into()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pdet"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Runtime(Error::Data(format!("no .pdet files in {}", dir.display()))));
    }
    Ok(paths.iter().map(read_trajectory).collect::<spus::Result<Vec<_>>>()?)
}

fn train_config(s: &Settings, f: &TrainFlags) -> CliResult<TrainConfig> {
    let norm = match s.get("norm", f.norm.clone(), "zscore".to_string())?.as_str() {
        "zscore" => NormMode::ZScore,
        "off" => NormMode::Off,
        other => return Err(Failure::Usage(format!("--norm must be zscore or off, got `{other}`"))),
    };
    let d = TrainConfig::default();
    Ok(TrainConfig {
        epochs: s.get("epochs", f.epochs, DEFAULT_EPOCHS)?,
        batch: s.get("batch", f.batch, DEFAULT_BATCH)?,
        initial_lr: s.get("lr", f.lr, d.initial_lr)?,
        seed: s.get("seed", f.seed, d.seed)?,
        eval_fraction: s.get("eval-fraction", f.eval_fraction, d.eval_fraction)?,
        norm,
        ..d
    })
}

fn outputs(s: &Settings, f: &TrainFlags) -> CliResult<(PathBuf, PathBuf)> {
    let out: PathBuf = s.require("out", f.out.clone())?;
    let default_metrics = PathBuf::from(format!("{}.metrics.csv", out.display()));
    let metrics = s.get("metrics", f.metrics.clone(), default_metrics)?;
    Ok((out, metrics))
}

fn generate(s: &Settings, a: GenerateArgs) -> CliResult<()> {
    let p = preset(&s.get("dataset", a.dataset, "ce-rp".to_string())?)?;
    let count = s.get("count", a.count, 4)?;
    let size = s.get("size", a.size, 64)?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let intervals = s.get("intervals", a.intervals, p.family.default_intervals())?;
    let mut params = p.params();
    params.horizon = s.get("horizon", a.horizon, params.horizon)?;
    params.viscosity = s.get("viscosity", a.viscosity, params.viscosity)?;
    let out: PathBuf = s.require("out", a.out)?;
    s.finish()?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(e.into()))?;
    for i in 0..count as u64 {
        let ic = p.ic(seed + i);
        let t = spus::pde::generate_trajectory(p.family, &ic, size, size, intervals, &params)?;
        let path = out.join(format!("{}_{:06}.pdet", p.name, seed + i));
        write_trajectory(&t, &path)?;
        println!("wrote {} ({} snapshots, dt {:e})", path.display(), t.len(), t.dt);
    }
    Ok(())
}

fn report_training(rep: &spus::train::TrainReport, metrics: &Path, out: &Path) -> CliResult<()> {
    std::fs::write(metrics, metrics_csv(&rep.history)).map_err(|e| Failure::Runtime(e.into()))?;
    println!(
        "initial loss {:e}, final train loss {:e}, best eval mse {:e} at epoch {}",
        rep.initial_loss,
        rep.final_train_loss(),
        rep.best_eval_mse,
        rep.best_epoch
    );
    println!("wrote {} and {}", out.display(), metrics.display());
    Ok(())
}

fn run_pretrain(s: &Settings, a: TrainArgs) -> CliResult<()> {
    let cfg = train_config(s, &a.train)?;
    let width = s.get("width", a.width, 32)?;
    let dirs: Vec<PathBuf> = if a.data.is_empty() { vec![s.require("data", None)?] } else { a.data };
    let (out, metrics) = outputs(s, &a.train)?;
    s.finish()?;
    let mut data = Vec::new();
    for d in &dirs {
        data.extend(read_dir(d)?);
    }
    let (h, w) = (data[0].height, data[0].width);
    let model = build_model(ModelConfig::paper(CORE_FIELDS, h, w).with_base_width(width), cfg.seed)?;
    let (ck, rep) = pretrain(model, &data, &cfg, &mut ())?;
    save_checkpoint(&ck, &out)?;
    report_training(&rep, &metrics, &out)
}

fn run_finetune(s: &Settings, a: FinetuneArgs) -> CliResult<()> {
    let cfg = train_config(s, &a.train)?;
    let ckpt: PathBuf = s.require("checkpoint", a.checkpoint)?;
    let dir: PathBuf = s.require("data", a.data)?;
    let max = s.opt("max-trajectories", a.max_trajectories)?;
    let (out, metrics) = outputs(s, &a.train)?;
    s.finish()?;
    let pre = load_checkpoint(&ckpt)?;
    let mut data = read_dir(&dir)?;
    if let Some(m) = max {
        data.truncate(m);
    }
    let d_task = data[0].field_count();
    let (ck, rep) = finetune(&pre, &data, d_task, &cfg, &mut ())?;
    save_checkpoint(&ck, &out)?;
    report_training(&rep, &metrics, &out)
}

fn run_rollout(s: &Settings, a: RolloutArgs) -> CliResult<()> {
    let ck = load_checkpoint(s.require::<PathBuf>("checkpoint", a.checkpoint)?)?;
    let traj = read_trajectory(s.require::<PathBuf>("trajectory", a.trajectory)?)?;
    let steps = s.get("steps", a.steps, traj.len().saturating_sub(1))?;
    let out: PathBuf = s.require("out", a.out)?;
    s.finish()?;
    let x0 = traj.snapshot(0)?;
    let preds = rollout(&ck.model, &ck.norm, &x0, steps)?;
    let mut data = x0.into_data();
    for p in preds {
        data.extend(p.into_data());
    }
    let pred = Trajectory::new(traj.family, traj.height, traj.width, traj.field_names.clone(), traj.dt, traj.seed, data)?;
    write_trajectory(&pred, &out)?;
    println!("wrote {} ({steps} predicted steps)", out.display());
    Ok(())
}

fn run_eval(s: &Settings, a: EvalArgs) -> CliResult<()> {
    let ck = load_checkpoint(s.require::<PathBuf>("checkpoint", a.checkpoint)?)?;
    let data = read_dir(&s.require::<PathBuf>("data", a.data)?)?;
    let shortest = data.iter().map(Trajectory::len).min().unwrap_or(1);
    let steps = s.get("steps", a.steps, shortest.saturating_sub(1))?;
    let raw = s.get("raw", a.raw.then_some(true), false)?;
    let out = s.opt::<PathBuf>("out", a.out)?;
    s.finish()?;
    let report = eval_dataset(&ck.model, &ck.norm, &data, steps, raw)?;
    let csv = report.to_csv();
    match out {
        Some(p) => {
            std::fs::write(&p, &csv).map_err(|e| Failure::Runtime(e.into()))?;
            println!(
                "average {} mse over {} trajectories and {steps} steps: {:e} ({:.2?})",
                if raw { "raw" } else { "normalized" },
                report.trajectories,
                report.average,
                report.duration
            );
            println!("wrote {}", p.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_export(s: &Settings, a: ExportArgs) -> CliResult<()> {
    let traj = read_trajectory(s.require::<PathBuf>("trajectory", a.trajectory)?)?;
    let truth = s.opt::<PathBuf>("truth", a.truth)?;
    let step = s.get("step", a.step, 0)?;
    let field = s.get("field", a.field, 0)?;
    let out: PathBuf = s.require("out", a.out)?;
    s.finish()?;
    match truth {
        Some(t) => export_panel(&traj, &read_trajectory(t)?, step, field, &out)?,
        None => export_snapshot(&traj, step, field, &out)?,
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn inspect(a: InspectArgs) -> CliResult<()> {
    let bytes = std::fs::read(&a.path).map_err(|e| Failure::Runtime(e.into()))?;
    if bytes.starts_with(TRAJECTORY_MAGIC) {
        let h = trajectory_header(&bytes)?;
        println!("trajectory {}", a.path.display());
        println!("family = {}", h.family.tag());
        println!("fields = {}", h.field_names.join(","));
        println!("grid = {}x{}", h.height, h.width);
        println!("snapshots = {}", h.snapshots);
        println!("dt = {:e}", h.dt);
        println!("seed = {}", h.seed);
    } else if bytes.starts_with(CHECKPOINT_MAGIC) {
        let ck = checkpoint_from_bytes(&bytes)?;
        let c = ck.model.core.config();
        println!("checkpoint {}", a.path.display());
        println!("base-width = {}", c.base_width);
        println!("blocks-per-level = {}", c.blocks_per_level);
        println!("core-fields = {}", c.in_fields);
        println!("grid = {}x{}", c.height, c.width);
        match &ck.model.adapters {
            Some(ad) => println!("adapter-fields = {}", ad.d_task),
            None => println!("adapter-fields = none"),
        }
        println!("epoch = {}", ck.epoch);
        println!("norm-mean = {:?}", ck.norm.mean);
        println!("norm-std = {:?}", ck.norm.std);
        println!("params = {}", ck.model.count_params());
        println!("entries = {}", checkpoint_manifest(&bytes)?.len());
    } else {
        return Err(Failure::Runtime(Error::Format(format!(
            "{} is neither a checkpoint nor a trajectory",
            a.path.display()
        ))));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let s = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => generate(&s, a),
        Command::Pretrain(a) => run_pretrain(&s, a),
        Command::Finetune(a) => run_finetune(&s, a),
        Command::Rollout(a) => run_rollout(&s, a),
        Command::Eval(a) => run_eval(&s, a),
        Command::Export(a) => run_export(&s, a),
        Command::Inspect(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

