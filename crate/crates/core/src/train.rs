//! Single-step pair training: pretraining on the five-field core and
//! fine-tuning through adapters.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{mse_value, Graph, NodeId};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::model::{build_model, wrap_with_adapters, AdaptedModel, Model, ModelConfig, CORE_FIELDS};
use crate::optim::{adam_step, lr_at, AdamState, LrSchedule};
use crate::pde::Trajectory;
use crate::tensor::{Dims, Mode, Tensor4};

pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_BATCH: usize = 10;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_EVAL_FRACTION: f64 = 0.1;

/// Decorrelates the split permutation from the sampler stream of the same seed.
const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Per-field z-score with training-split statistics.
    ZScore,
    /// Identity transform.
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub initial_lr: f64,
    pub floor_lr: f64,
    pub seed: u64,
    pub eval_fraction: f64,
    pub norm: NormMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            initial_lr: DEFAULT_LR,
            floor_lr: 0.0,
            seed: 0,
            eval_fraction: DEFAULT_EVAL_FRACTION,
            norm: NormMode::ZScore,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch < 1 {
            return Err(Error::Config(format!("epochs and batch must be >= 1, got {} and {}", self.epochs, self.batch)));
        }
        if !(self.initial_lr > 0.0) || !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::Config(format!(
                "need a positive learning rate and an eval fraction in [0, 1), got {} and {}",
                self.initial_lr, self.eval_fraction
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { initial_lr: self.initial_lr, total_epochs: self.epochs, floor_lr: self.floor_lr }
    }
}

/// Per-field affine normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(fields: usize) -> Self {
        Self { mean: vec![0.0; fields], std: vec![1.0; fields] }
    }

    pub fn fields(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, d: usize) -> Result<()> {
        if d != self.fields() {
            return Err(Error::Shape(format!("normalization has {} fields, data has {d}", self.fields())));
        }
        Ok(())
    }

    fn apply(&self, t: &Tensor4, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor4> {
        let d = t.dims();
        self.check(d.c)?;
        let mut out = t.clone();
        for n in 0..d.n {
            for c in 0..d.c {
                let (m, s) = (self.mean[c], self.std[c]);
                out.plane_mut(n, c).iter_mut().for_each(|v| *v = f(*v, m, s));
            }
        }
        Ok(out)
    }

    pub fn normalize(&self, t: &Tensor4) -> Result<Tensor4> {
        self.apply(t, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, t: &Tensor4) -> Result<Tensor4> {
        self.apply(t, |v, m, s| v * s + m)
    }

    /// Normalizes a whole `[t][field][row][col]` trajectory buffer.
    fn normalize_frames(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        self.check(traj.field_count())?;
        let plane = traj.height * traj.width;
        let frame = traj.frame_len();
        Ok(traj
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = (i % frame) / plane;
                (v - self.mean[c]) / self.std[c]
            })
            .collect())
    }
}

/// Per-field mean and standard deviation over every snapshot of `trajs`.
///
/// Zero-variance fields get `std = 1`.
pub fn compute_norm_stats(trajs: &[&Trajectory]) -> Result<NormStats> {
    let first = trajs.first().ok_or_else(|| Error::Contract("no trajectories to normalize over".into()))?;
    let d = first.field_count();
    check_homogeneous(trajs, d)?;
    let plane = first.height * first.width;
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for t in trajs {
        for s in 0..t.len() {
            for (c, chunk) in t.frame(s).chunks_exact(plane).enumerate() {
                sum[c] += chunk.iter().sum::<f64>();
            }
        }
        count += t.len() * plane;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; d];
    for t in trajs {
        for s in 0..t.len() {
            for (c, chunk) in t.frame(s).chunks_exact(plane).enumerate() {
                sq[c] += chunk.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| {
            let sd = (s / count as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Ok(NormStats { mean, std })
}

fn check_homogeneous(trajs: &[&Trajectory], d: usize) -> Result<()> {
    let Some(first) = trajs.first() else { return Ok(()) };
    for (i, t) in trajs.iter().enumerate() {
        if t.field_count() != d || (t.height, t.width) != (first.height, first.width) {
            return Err(Error::Data(format!(
                "trajectory {i} is {}x{}x{}, expected {d}x{}x{}",
                t.field_count(),
                t.height,
                t.width,
                first.height,
                first.width
            )));
        }
        if t.len() < 2 {
            return Err(Error::Data(format!("trajectory {i} has {} snapshots; pairs need at least 2", t.len())));
        }
    }
    Ok(())
}

/// Seeded trajectory-level split into (train, eval) index lists.
///
/// With two or more trajectories both sides are non-empty.
pub fn split_indices(count: usize, eval_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if count < 2 {
        return Err(Error::Data(format!("need at least 2 trajectories for a train/eval split, got {count}")));
    }
    let n_eval = ((count as f64 * eval_fraction).round() as usize).clamp(1, count - 1);
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM));
    let mut eval = idx[..n_eval].to_vec();
    let mut train = idx[n_eval..].to_vec();
    eval.sort_unstable();
    train.sort_unstable();
    Ok((train, eval))
}

/// A consecutive ground-truth pair `(X_t, X_{t+1})` of trajectory `traj`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairRef {
    pub traj: usize,
    pub t: usize,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub pairs: Vec<PairRef>,
    pub input: Tensor4,
    pub target: Tensor4,
}

/// Seeded per-epoch permutation over every consecutive pair of a pool of
/// trajectories, served in normalized space.
pub struct PairSampler {
    frames: Vec<Vec<f64>>,
    dims: Dims,
    rng: ChaCha8Rng,
    order: Vec<PairRef>,
    cursor: usize,
}

impl PairSampler {
    pub fn new(trajs: &[&Trajectory], stats: &NormStats, seed: u64) -> Result<Self> {
        let first = trajs.first().ok_or_else(|| Error::Contract("sampler needs at least one trajectory".into()))?;
        check_homogeneous(trajs, first.field_count())?;
        let frames = trajs.iter().map(|t| stats.normalize_frames(t)).collect::<Result<Vec<_>>>()?;
        let order = trajs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len() - 1).map(move |s| PairRef { traj: i, t: s }))
            .collect();
        let dims = Dims::new(1, first.field_count(), first.height, first.width);
        let mut sampler = Self { frames, dims, rng: ChaCha8Rng::seed_from_u64(seed), order, cursor: 0 };
        sampler.begin_epoch();
        Ok(sampler)
    }

    /// Pairs visited per epoch: the sum of `len - 1` over trajectories.
    pub fn pairs_per_epoch(&self) -> usize {
        self.order.len()
    }

    pub fn batches_per_epoch(&self, batch: usize) -> usize {
        self.order.len().div_ceil(batch.max(1))
    }

    /// Reshuffles and rewinds.
    pub fn begin_epoch(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn frame(&self, traj: usize, t: usize) -> &[f64] {
        let n = self.dims.len();
        &self.frames[traj][t * n..(t + 1) * n]
    }

    fn gather(&self, pairs: &[PairRef]) -> Result<Batch> {
        let d = Dims { n: pairs.len(), ..self.dims };
        let mut input = Vec::with_capacity(d.len());
        let mut target = Vec::with_capacity(d.len());
        for p in pairs {
            input.extend_from_slice(self.frame(p.traj, p.t));
            target.extend_from_slice(self.frame(p.traj, p.t + 1));
        }
        Ok(Batch { pairs: pairs.to_vec(), input: Tensor4::new(d, input)?, target: Tensor4::new(d, target)? })
    }

    /// Next batch of the current epoch, or `None` at the epoch boundary.
    pub fn next_batch(&mut self, batch: usize) -> Result<Option<Batch>> {
        if self.cursor >= self.order.len() {
            return Ok(None);
        }
        let end = (self.cursor + batch.max(1)).min(self.order.len());
        let b = self.gather(&self.order[self.cursor..end])?;
        self.cursor = end;
        Ok(Some(b))
    }

    /// Every pair in a fixed (unshuffled) order, chunked by `batch`.
    fn sequential(&self, batch: usize) -> Result<Vec<Batch>> {
        let mut all = self.order.clone();
        all.sort_unstable();
        all.chunks(batch.max(1)).map(|c| self.gather(c)).collect()
    }
}

/// Mean squared error node on `g`.
pub fn mse_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    g.mse(pred, target)
}

/// Mean squared error of two tensors.
pub fn mse(pred: &Tensor4, target: &Tensor4) -> Result<f64> {
    mse_value(pred, target)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_mse: f64,
}

/// What an observer sees after each optimizer step.
pub struct StepInfo<'a> {
    pub epoch: usize,
    pub batch_index: usize,
    pub batch: &'a Batch,
    pub prediction: &'a Tensor4,
    pub loss: f64,
}

/// Instrumentation hooks for the training loop.
pub trait TrainObserver {
    fn on_step(&mut self, _step: &StepInfo<'_>) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_eval_mse: f64,
    /// Pair-weighted training loss of the untouched initial model.
    pub initial_loss: f64,
    pub steps_per_epoch: usize,
    pub train_indices: Vec<usize>,
    pub eval_indices: Vec<usize>,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.train_loss)
    }
}

/// 1-based index of the first minimum.
pub fn best_epoch(eval_mse: &[f64]) -> Option<usize> {
    eval_mse
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i + 1)
}

/// Comma-separated per-epoch metrics with a header line.
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,train_loss,eval_mse\n");
    for r in history {
        let _ = writeln!(s, "{},{:e},{:e},{:e}", r.epoch, r.lr, r.train_loss, r.eval_mse);
    }
    s
}

fn pair_weighted(batches: &[Batch], mut f: impl FnMut(&Batch) -> Result<f64>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for b in batches {
        total += f(b)? * b.pairs.len() as f64;
        count += b.pairs.len();
    }
    Ok(total / count as f64)
}

/// One-step MSE over every pair of `trajs`, in eval mode.
///
/// `raw` compares in physical units; otherwise in the normalized space of `norm`.
pub fn one_step_mse(model: &AdaptedModel, norm: &NormStats, trajs: &[&Trajectory], raw: bool, batch: usize) -> Result<f64> {
    let sampler = PairSampler::new(trajs, norm, 0)?;
    pair_weighted(&sampler.sequential(batch)?, |b| {
        let pred = model.forward_eval(&b.input)?;
        if raw {
            mse(&norm.denormalize(&pred)?, &norm.denormalize(&b.target)?)
        } else {
            mse(&pred, &b.target)
        }
    })
}

/// Train-mode loss without touching parameters or running statistics.
fn probe_loss(model: &AdaptedModel, batches: &[Batch]) -> Result<f64> {
    pair_weighted(batches, |b| {
        let mut g = Graph::new();
        let x = g.input(b.input.clone());
        let (pred, _) = model.record(&mut g, x, Mode::Train, None)?;
        let y = g.input(b.target.clone());
        let loss = mse_loss(&mut g, pred, y)?;
        Ok(g.value(loss)?.data()[0])
    })
}

/// Shared epoch loop. Returns the best-eval checkpoint and the history.
pub fn train(
    mut model: AdaptedModel,
    data: &[Trajectory],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    let d = model.fields();
    let all: Vec<&Trajectory> = data.iter().collect();
    check_homogeneous(&all, d)?;
    let (train_idx, eval_idx) = split_indices(data.len(), config.eval_fraction, config.seed)?;
    let train_set: Vec<&Trajectory> = train_idx.iter().map(|&i| &data[i]).collect();
    let eval_set: Vec<&Trajectory> = eval_idx.iter().map(|&i| &data[i]).collect();
    let norm = match config.norm {
        NormMode::ZScore => compute_norm_stats(&train_set)?,
        NormMode::Off => NormStats::identity(d),
    };
    let mut sampler = PairSampler::new(&train_set, &norm, config.seed)?;
    let steps = sampler.batches_per_epoch(config.batch);
    let initial_loss = probe_loss(&model, &sampler.sequential(config.batch)?)?;
    let schedule = config.schedule();
    let mut adam = AdamState::new();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, AdaptedModel)> = None;

    for epoch in 1..=config.epochs {
        // The rate is held for the whole epoch, starting from the initial value.
        let lr = lr_at(epoch - 1, &schedule)?;
        if epoch > 1 {
            sampler.begin_epoch();
        }
        let (mut loss_sum, mut seen, mut batch_index) = (0.0, 0usize, 0usize);
        while let Some(batch) = sampler.next_batch(config.batch)? {
            let mut g = Graph::new();
            let x = g.input(batch.input.clone());
            let (pred, moments) = model.record(&mut g, x, Mode::Train, None)?;
            let y = g.input(batch.target.clone());
            let loss_id = mse_loss(&mut g, pred, y)?;
            let loss = g.value(loss_id)?.data()[0];
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss is {loss} at epoch {epoch}, batch {batch_index}")));
            }
            let grads = g.backward(loss_id)?.into_params();
            adam_step(model.params_mut(), &grads, &mut adam, lr)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {batch_index}: {e}")))?;
            model.core.apply_moments(&moments);
            observer.on_step(&StepInfo { epoch, batch_index, batch: &batch, prediction: g.value(pred)?, loss });
            loss_sum += loss * batch.pairs.len() as f64;
            seen += batch.pairs.len();
            batch_index += 1;
        }
        let eval_mse = one_step_mse(&model, &norm, &eval_set, false, config.batch)?;
        let record = EpochRecord { epoch, lr, train_loss: loss_sum / seen as f64, eval_mse };
        observer.on_epoch(&record);
        history.push(record);
        if best.as_ref().map_or(true, |(_, b, _)| eval_mse < *b) {
            best = Some((epoch, eval_mse, model.clone()));
        }
    }

    let (best_epoch, best_eval_mse, best_model) = best.expect("at least one epoch ran");
    let report = TrainReport {
        history,
        best_epoch,
        best_eval_mse,
        initial_loss,
        steps_per_epoch: steps,
        train_indices: train_idx,
        eval_indices: eval_idx,
    };
    Ok((Checkpoint { model: best_model, norm, epoch: best_epoch }, report))
}

/// Pretrains a five-field core on pooled trajectories.
pub fn pretrain(
    model: Model,
    data: &[Trajectory],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Checkpoint, TrainReport)> {
    if model.config().in_fields != CORE_FIELDS {
        return Err(Error::Config(format!("pretraining needs a {CORE_FIELDS}-field core")));
    }
    if let Some((i, t)) = data.iter().enumerate().find(|(_, t)| t.field_count() != CORE_FIELDS) {
        return Err(Error::Data(format!("pretraining trajectory {i} has {} fields, expected {CORE_FIELDS}", t.field_count())));
    }
    train(model.into(), data, config, observer)
}

/// Adapts a pretrained core to a task with `d_task` fields. All parameters train.
pub fn finetune(
    pretrained: &Checkpoint,
    data: &[Trajectory],
    d_task: usize,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Checkpoint, TrainReport)> {
    if let Some((i, t)) = data.iter().enumerate().find(|(_, t)| t.field_count() != d_task) {
        return Err(Error::Data(format!("task trajectory {i} has {} fields, expected {d_task}", t.field_count())));
    }
    let model = wrap_with_adapters(pretrained.model.core.clone(), d_task, config.seed)?;
    train(model, data, config, observer)
}

/// Same architecture as [`finetune`] but from a fresh random core.
pub fn train_from_scratch(
    core: ModelConfig,
    data: &[Trajectory],
    d_task: usize,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Checkpoint, TrainReport)> {
    let model = wrap_with_adapters(build_model(core, config.seed)?, d_task, config.seed)?;
    train(model, data, config, observer)
}
