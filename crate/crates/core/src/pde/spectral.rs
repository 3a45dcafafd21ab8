//! 2-D periodic FFT helpers on square power-of-two grids over `[0, L)²`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub struct Spectral {
    n: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Angular wavenumber per index: `2π/L · m` with `m` in FFT order.
    k: Vec<f64>,
}

pub fn check_pow2(h: usize, w: usize) -> Result<()> {
    if h != w || !h.is_power_of_two() || h < 2 {
        return Err(Error::Config(format!(
            "spectral solver needs a square power-of-two grid, got {h}x{w}"
        )));
    }
    Ok(())
}

impl Spectral {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        check_pow2(n, n)?;
        let mut planner = FftPlanner::new();
        let k = (0..n)
            .map(|i| {
                let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
                2.0 * PI / length * m
            })
            .collect();
        Ok(Self {
            n,
            length,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Wavenumber for index `i`; the Nyquist index gets 0 for odd derivatives.
    pub fn k_odd(&self, i: usize) -> f64 {
        if i == self.n / 2 {
            0.0
        } else {
            self.k[i]
        }
    }

    pub fn k(&self, i: usize) -> f64 {
        self.k[i]
    }

    /// `|k|²` at `(row, col)`: rows carry `ky`, columns `kx`.
    pub fn k2(&self, row: usize, col: usize) -> f64 {
        self.k[row] * self.k[row] + self.k[col] * self.k[col]
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        for row in data.chunks_exact_mut(n) {
            fft.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                col[r] = data[r * n + c];
            }
            fft.process(&mut col);
            for r in 0..n {
                data[r * n + c] = col[r];
            }
        }
    }

    pub fn forward(&self, field: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    /// Inverse transform, normalized, keeping the real part.
    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut data = spec.to_vec();
        self.transform(&mut data, &self.inverse);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.iter().map(|c| c.re * scale).collect()
    }

    /// Spectral `∂/∂x` (along columns) of a field.
    pub fn ddx(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut out = spec.to_vec();
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] *= Complex64::new(0.0, self.k_odd(c));
            }
        }
        out
    }

    /// Spectral `∂/∂y` (along rows).
    pub fn ddy(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut out = spec.to_vec();
        for r in 0..n {
            let ky = Complex64::new(0.0, self.k_odd(r));
            for c in 0..n {
                out[r * n + c] *= ky;
            }
        }
        out
    }

    /// Spectral Laplacian of a physical field.
    pub fn laplacian(&self, field: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut s = self.forward(field);
        for r in 0..n {
            for c in 0..n {
                s[r * n + c] *= -self.k2(r, c);
            }
        }
        self.inverse(&s)
    }
}
