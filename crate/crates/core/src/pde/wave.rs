//! Leapfrog integration of `w_tt = c(x)² ∇²w` on the periodic unit square.

use crate::error::{Error, Result};

/// Displacement at the current and previous time level.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub n: usize,
    pub w: Vec<f64>,
    pub w_prev: Vec<f64>,
}

pub fn cfl_limit(n: usize, speed: &[f64]) -> f64 {
    let cmax = speed.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    (1.0 / n as f64) / (cmax * std::f64::consts::SQRT_2)
}

/// Five-point periodic Laplacian with spacing `1/n`.
pub fn laplacian(f: &[f64], n: usize) -> Vec<f64> {
    let inv = (n * n) as f64;
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        let (up, dn) = ((r + n - 1) % n, (r + 1) % n);
        for c in 0..n {
            let (lf, rt) = ((c + n - 1) % n, (c + 1) % n);
            out[r * n + c] =
                (f[r * n + lf] + f[r * n + rt] + f[up * n + c] + f[dn * n + c] - 4.0 * f[r * n + c]) * inv;
        }
    }
    out
}

pub fn step_wave(state: &WaveState, dt: f64, speed: &[f64]) -> Result<WaveState> {
    let n = state.n;
    if state.w.len() != n * n || state.w_prev.len() != n * n || speed.len() != n * n {
        return Err(Error::Shape(format!("wave fields must all be {n}x{n}")));
    }
    let limit = cfl_limit(n, speed);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, limit });
    }
    let lap = laplacian(&state.w, n);
    let dt2 = dt * dt;
    let next = (0..n * n)
        .map(|i| 2.0 * state.w[i] - state.w_prev[i] + dt2 * speed[i] * speed[i] * lap[i])
        .collect();
    Ok(WaveState { n, w: next, w_prev: state.w.clone() })
}

/// Discrete energy between the two stored levels,
/// `Σ c⁻² ((w − w_prev)/dt)² + Σ_edges Dw · Dw_prev`, times the cell area.
///
/// For the leapfrog scheme this quantity is conserved exactly in exact
/// arithmetic, even with spatially varying `c`.
pub fn energy(state: &WaveState, dt: f64, speed: &[f64]) -> f64 {
    let n = state.n;
    let (w, p) = (&state.w, &state.w_prev);
    let h2 = (n * n) as f64;
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            let vel = (w[i] - p[i]) / dt;
            kinetic += vel * vel / (speed[i] * speed[i]);
            for j in [r * n + (c + 1) % n, ((r + 1) % n) * n + c] {
                potential += (w[j] - w[i]) * (p[j] - p[i]) * h2;
            }
        }
    }
    (kinetic + potential) / h2
}
