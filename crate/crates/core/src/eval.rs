//! Autoregressive rollout and dataset-level error reports.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{AdaptedModel, Model};
use crate::pde::Trajectory;
use crate::tensor::Tensor4;
use crate::train::{mse, NormStats};

/// A one-step map in normalized space.
pub trait Predictor {
    fn predict(&self, x: &Tensor4) -> Result<Tensor4>;
}

impl Predictor for Model {
    fn predict(&self, x: &Tensor4) -> Result<Tensor4> {
        self.forward_eval(x)
    }
}

impl Predictor for AdaptedModel {
    fn predict(&self, x: &Tensor4) -> Result<Tensor4> {
        self.forward_eval(x)
    }
}

impl<F: Fn(&Tensor4) -> Result<Tensor4>> Predictor for F {
    fn predict(&self, x: &Tensor4) -> Result<Tensor4> {
        self(x)
    }
}

/// Feeds each prediction back as the next input, starting from `x0`.
///
/// Returns `X'_1 ..= X'_n` in physical units.
pub fn rollout<P: Predictor + ?Sized>(model: &P, norm: &NormStats, x0: &Tensor4, n: usize) -> Result<Vec<Tensor4>> {
    if n == 0 {
        return Err(Error::Contract("rollout needs at least one step".into()));
    }
    let mut state = norm.normalize(x0)?;
    let mut out = Vec::with_capacity(n);
    for step in 1..=n {
        state = model.predict(&state)?;
        if let Some(i) = state.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence { step, detail: format!("value {} at flat index {i}", state.data()[i]) });
        }
        out.push(norm.denormalize(&state)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    /// Mean over trajectories of the MSE at steps `1..=n`.
    pub per_step: Vec<f64>,
    pub average: f64,
    /// Per-field MSE averaged over steps and trajectories.
    pub per_field: Vec<f64>,
    pub field_names: Vec<String>,
    /// `per_step_field[t][f]`.
    pub per_step_field: Vec<Vec<f64>>,
    pub trajectories: usize,
    pub duration: Duration,
}

/// Mean after sorting, so the result does not depend on input order.
fn ordered_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn field_mse(a: &Tensor4, b: &Tensor4, field: usize) -> f64 {
    let (pa, pb) = (a.plane(0, field), b.plane(0, field));
    pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / pa.len() as f64
}

/// Rolls every trajectory out from its initial state for `n` steps and
/// compares against ground truth. `raw` selects physical units instead of
/// the normalized space of `norm`.
pub fn eval_dataset<P: Predictor + ?Sized>(
    model: &P,
    norm: &NormStats,
    trajs: &[Trajectory],
    n: usize,
    raw: bool,
) -> Result<RolloutReport> {
    let start = Instant::now();
    let first = trajs.first().ok_or_else(|| Error::Contract("no trajectories to evaluate".into()))?;
    let d = first.field_count();
    // steps[t][k], fields[t][f][k] for trajectory k
    let mut steps: Vec<Vec<f64>> = vec![Vec::with_capacity(trajs.len()); n];
    let mut fields: Vec<Vec<Vec<f64>>> = vec![vec![Vec::with_capacity(trajs.len()); d]; n];
    for (k, traj) in trajs.iter().enumerate() {
        if traj.len() < n + 1 {
            return Err(Error::Data(format!(
                "trajectory {k} has {} snapshots, a {n}-step rollout needs {}",
                traj.len(),
                n + 1
            )));
        }
        if traj.field_count() != d {
            return Err(Error::Data(format!("trajectory {k} has {} fields, expected {d}", traj.field_count())));
        }
        let preds = rollout(model, norm, &traj.snapshot(0)?, n)?;
        for (t, pred) in preds.iter().enumerate() {
            let truth = traj.snapshot(t + 1)?;
            let (p, g) = if raw { (pred.clone(), truth) } else { (norm.normalize(pred)?, norm.normalize(&truth)?) };
            steps[t].push(mse(&p, &g)?);
            for f in 0..d {
                fields[t][f].push(field_mse(&p, &g, f));
            }
        }
    }
    let per_step: Vec<f64> = steps.into_iter().map(ordered_mean).collect();
    let per_step_field: Vec<Vec<f64>> =
        fields.into_iter().map(|fs| fs.into_iter().map(ordered_mean).collect()).collect();
    let per_field = (0..d).map(|f| ordered_mean(per_step_field.iter().map(|r| r[f]).collect())).collect();
    let average = per_step.iter().sum::<f64>() / n as f64;
    Ok(RolloutReport {
        per_step,
        average,
        per_field,
        field_names: first.field_names.clone(),
        per_step_field,
        trajectories: trajs.len(),
        duration: start.elapsed(),
    })
}

impl RolloutReport {
    /// `step,mse,<fields>` rows for steps `1..=n` followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("step,mse,{}\n", self.field_names.join(","));
        let row = |label: String, total: f64, fields: &[f64]| {
            let f: Vec<String> = fields.iter().map(|v| format!("{v:e}")).collect();
            format!("{label},{total:e},{}\n", f.join(","))
        };
        for (t, (v, f)) in self.per_step.iter().zip(&self.per_step_field).enumerate() {
            s.push_str(&row((t + 1).to_string(), *v, f));
        }
        s.push_str(&row("mean".into(), self.average, &self.per_field));
        s
    }
}
