//! Adam with bias correction and the per-epoch linear learning-rate decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Moments {
    m: Tensor4,
    v: Tensor4,
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self { beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS, step: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor4> {
        self.moments.get(name).map(|m| &m.m)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor4> {
        self.moments.get(name).map(|m| &m.v)
    }
}

/// One bias-corrected Adam update over every `(name, param)` pair.
///
/// Gradients are validated up front; a non-finite gradient aborts before any
/// parameter or moment is touched.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = (&'a str, &'a mut Tensor4)>,
    grads: &BTreeMap<String, Tensor4>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let params: Vec<(&str, &mut Tensor4)> = params.into_iter().collect();
    for (name, p) in &params {
        let g = grads
            .get(*name)
            .ok_or_else(|| Error::Contract(format!("no gradient for parameter `{name}`")))?;
        p.same_dims(g, name)?;
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of `{name}` is {} at flat index {i} (optimizer step {})",
                g.data()[i],
                state.step + 1
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in params {
        let g = &grads[name];
        let mo = state.moments.entry(name.to_string()).or_insert_with(|| Moments {
            m: Tensor4::zeros(p.dims()),
            v: Tensor4::zeros(p.dims()),
        });
        let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear decay from `initial_lr` to `floor_lr` at `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub total_epochs: usize,
    pub floor_lr: f64,
}

impl LrSchedule {
    pub fn linear(initial_lr: f64, total_epochs: usize) -> Self {
        Self { initial_lr, total_epochs, floor_lr: 0.0 }
    }
}

pub fn lr_at(epoch: usize, schedule: &LrSchedule) -> Result<f64> {
    if schedule.total_epochs == 0 || epoch > schedule.total_epochs {
        return Err(Error::Contract(format!(
            "epoch {epoch} outside 0..={}",
            schedule.total_epochs
        )));
    }
    let frac = epoch as f64 / schedule.total_epochs as f64;
    Ok((schedule.initial_lr * (1.0 - frac)).max(schedule.floor_lr))
}
