use super::{Tensor4, BN_EPS, BN_MOMENTUM};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Exponential moving averages of per-channel batch moments.
///
/// `tracked` counts the train-mode batches folded in; zero means the
/// statistics are not usable for evaluation yet.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub tracked: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels], tracked: 0 }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.tracked > 0
    }

    /// Folds one batch in. `var` is the biased batch variance over `count`
    /// samples; the running estimate stores the unbiased one.
    pub fn update(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let correction = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - BN_MOMENTUM) * self.mean[c] + BN_MOMENTUM * mean[c];
            self.var[c] = (1.0 - BN_MOMENTUM) * self.var[c] + BN_MOMENTUM * var[c] * correction;
        }
        self.tracked += 1;
    }
}

/// Everything the backward pass needs from a train-mode batchnorm.
#[derive(Debug, Clone)]
pub struct BatchNormOutput {
    pub output: Tensor4,
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

fn check_params(input: &Tensor4, gamma: &[f64], beta: &[f64]) -> Result<()> {
    let c = input.dims().c;
    if gamma.len() != c || beta.len() != c {
        return shape_err(format!(
            "batchnorm over {c} channels got gamma {} / beta {}",
            gamma.len(),
            beta.len()
        ));
    }
    Ok(())
}

/// Train-mode normalization with batch statistics over `(N, H, W)`.
pub fn batchnorm_train(input: &Tensor4, gamma: &[f64], beta: &[f64]) -> Result<BatchNormOutput> {
    check_params(input, gamma, beta)?;
    let d = input.dims();
    let count = d.n * d.plane();
    let mut mean = vec![0.0; d.c];
    let mut var = vec![0.0; d.c];
    for c in 0..d.c {
        let mut s = 0.0;
        for n in 0..d.n {
            s += input.plane(n, c).iter().sum::<f64>();
        }
        let m = s / count as f64;
        let mut q = 0.0;
        for n in 0..d.n {
            q += input.plane(n, c).iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        }
        mean[c] = m;
        var[c] = q / count as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor4::zeros(d);
    let mut output = Tensor4::zeros(d);
    for n in 0..d.n {
        for c in 0..d.c {
            let (m, s, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            let src = input.plane(n, c);
            for (h, &x) in xhat.plane_mut(n, c).iter_mut().zip(src) {
                *h = (x - m) * s;
            }
            let hp = xhat.plane(n, c).to_vec();
            for (o, h) in output.plane_mut(n, c).iter_mut().zip(hp) {
                *o = g * h + b;
            }
        }
    }
    Ok(BatchNormOutput { output, xhat, inv_std, mean, var, count })
}

/// Eval-mode normalization with frozen running statistics.
pub fn batchnorm_eval(
    input: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    stats: &RunningStats,
) -> Result<Tensor4> {
    check_params(input, gamma, beta)?;
    if stats.channels() != input.dims().c {
        return shape_err("running statistics channel count mismatch");
    }
    if !stats.is_initialized() {
        return Err(Error::UninitializedStats("batchnorm".into()));
    }
    let d = input.dims();
    let mut out = input.clone();
    for n in 0..d.n {
        for c in 0..d.c {
            let scale = gamma[c] / (stats.var[c] + BN_EPS).sqrt();
            let shift = beta[c] - stats.mean[c] * scale;
            out.plane_mut(n, c).iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    Ok(out)
}

/// Batch normalization. Train mode normalizes with batch moments and folds
/// them into `state`; eval mode reads `state`.
pub fn batchnorm(
    input: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    state: &mut RunningStats,
    mode: Mode,
) -> Result<Tensor4> {
    match mode {
        Mode::Train => {
            if state.channels() != input.dims().c {
                return shape_err("running statistics channel count mismatch");
            }
            let bn = batchnorm_train(input, gamma, beta)?;
            state.update(&bn.mean, &bn.var, bn.count);
            Ok(bn.output)
        }
        Mode::Eval => batchnorm_eval(input, gamma, beta, state),
    }
}
