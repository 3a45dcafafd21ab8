//! Pseudo-spectral vorticity-streamfunction solver for 2-D incompressible
//! Navier-Stokes on the periodic square `[0, 2π)²`.
//!
//! Time stepping is Heun's RK2 with the nonlinear term dealiased by the 2/3
//! rule and diffusion treated explicitly in Fourier space.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::spectral::Spectral;
use crate::error::{Error, Result};

pub const NS_DOMAIN: f64 = 2.0 * PI;
pub const NS_CFL: f64 = 0.5;

/// Body force added to the vorticity equation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Forcing {
    #[default]
    None,
    /// Velocity forcing `(A sin(k y), 0)`, whose curl `-A k cos(k y)` enters
    /// the vorticity equation, balanced by linear drag `μ ω`.
    Kolmogorov { amplitude: f64, wavenumber: u32, drag: f64 },
}

/// Solves `∇²ψ = rhs` for the zero-mean periodic `ψ`.
pub fn poisson_solve_periodic(rhs: &[f64], n: usize) -> Result<Vec<f64>> {
    if rhs.len() != n * n {
        return Err(Error::Shape(format!("rhs has {} values, expected {n}x{n}", rhs.len())));
    }
    let sp = Spectral::new(n, NS_DOMAIN)?;
    let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
    let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if mean.abs() > 1e-12 * scale {
        return Err(Error::Contract(format!(
            "periodic Poisson problem needs a zero-mean right-hand side, mean is {mean:.3e}"
        )));
    }
    let mut s = sp.forward(rhs);
    for r in 0..n {
        for c in 0..n {
            let k2 = sp.k2(r, c);
            s[r * n + c] = if k2 == 0.0 { Complex64::new(0.0, 0.0) } else { -s[r * n + c] / k2 };
        }
    }
    Ok(sp.inverse(&s))
}

/// Velocity `(u, v) = (∂ψ/∂y, -∂ψ/∂x)` with `∇²ψ = -ω`.
pub fn velocity_from_vorticity(omega: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let sp = Spectral::new(n, NS_DOMAIN)?;
    let psi = streamfunction_hat(&sp, &sp.forward(omega));
    let u = sp.inverse(&sp.ddy(&psi));
    let v: Vec<f64> = sp.inverse(&sp.ddx(&psi)).into_iter().map(|x| -x).collect();
    Ok((u, v))
}

/// Spectral divergence `∂u/∂x + ∂v/∂y`.
pub fn divergence(u: &[f64], v: &[f64], n: usize) -> Result<Vec<f64>> {
    let sp = Spectral::new(n, NS_DOMAIN)?;
    let du = sp.ddx(&sp.forward(u));
    let dv = sp.ddy(&sp.forward(v));
    let sum: Vec<Complex64> = du.iter().zip(&dv).map(|(a, b)| a + b).collect();
    Ok(sp.inverse(&sum))
}

fn streamfunction_hat(sp: &Spectral, omega_hat: &[Complex64]) -> Vec<Complex64> {
    let n = sp.n();
    let mut psi = omega_hat.to_vec();
    for r in 0..n {
        for c in 0..n {
            let k2 = sp.k2(r, c);
            psi[r * n + c] = if k2 == 0.0 { Complex64::new(0.0, 0.0) } else { psi[r * n + c] / k2 };
        }
    }
    psi
}

/// Largest stable step for the given vorticity at Courant number `cfl`.
///
/// Combines the advective bound with the explicit-diffusion bound
/// `ν k_max² dt ≤ 1`.
pub fn max_dt(omega: &[f64], n: usize, viscosity: f64, cfl: f64) -> Result<f64> {
    let (u, v) = velocity_from_vorticity(omega, n)?;
    let dx = NS_DOMAIN / n as f64;
    let speed = u.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max(a.abs() + b.abs()));
    let advective = if speed > 0.0 { cfl * dx / speed } else { f64::INFINITY };
    let kmax = (n / 2) as f64 * 2.0 * PI / NS_DOMAIN;
    let diffusive = if viscosity > 0.0 { 1.0 / (viscosity * 2.0 * kmax * kmax) } else { f64::INFINITY };
    Ok(advective.min(diffusive))
}

struct Rhs<'a> {
    sp: &'a Spectral,
    viscosity: f64,
    forcing_hat: Option<Vec<Complex64>>,
    drag: f64,
}

impl Rhs<'_> {
    fn eval(&self, w: &[Complex64]) -> Vec<Complex64> {
        let sp = self.sp;
        let n = sp.n();
        let psi = streamfunction_hat(sp, w);
        let u = sp.inverse(&sp.ddy(&psi));
        let v = sp.inverse(&sp.ddx(&psi));
        let wx = sp.inverse(&sp.ddx(w));
        let wy = sp.inverse(&sp.ddy(w));
        // Advection u·∇ω with v = -∂ψ/∂x folded into the sign.
        let adv: Vec<f64> = (0..n * n).map(|i| u[i] * wx[i] - v[i] * wy[i]).collect();
        let nl = sp.forward(&adv);
        let cutoff = n / 3;
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            let mr = r.min(n - r);
            for c in 0..n {
                let mc = c.min(n - c);
                let i = r * n + c;
                if r == 0 && c == 0 {
                    // The mean mode evolves only through forcing, which is zero-mean.
                    continue;
                }
                let a = if mr <= cutoff && mc <= cutoff { -nl[i] } else { Complex64::new(0.0, 0.0) };
                let mut d = a - w[i] * (self.viscosity * sp.k2(r, c) + self.drag);
                if let Some(f) = &self.forcing_hat {
                    d += f[i];
                }
                out[i] = d;
            }
        }
        out
    }
}

/// One Heun (RK2) step of the vorticity equation.
pub fn step_ns(omega: &[f64], n: usize, dt: f64, viscosity: f64, forcing: Forcing) -> Result<Vec<f64>> {
    if omega.len() != n * n {
        return Err(Error::Shape(format!("vorticity has {} values, expected {n}x{n}", omega.len())));
    }
    let sp = Spectral::new(n, NS_DOMAIN)?;
    let limit = max_dt(omega, n, viscosity, 1.0)?;
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, limit });
    }
    let (forcing_hat, drag) = match forcing {
        Forcing::None => (None, 0.0),
        Forcing::Kolmogorov { amplitude, wavenumber, drag } => {
            let k = wavenumber as f64 * 2.0 * PI / NS_DOMAIN;
            let f: Vec<f64> = (0..n * n)
                .map(|i| {
                    let y = (i / n) as f64 * NS_DOMAIN / n as f64;
                    -amplitude * k * (k * y).cos()
                })
                .collect();
            (Some(sp.forward(&f)), drag)
        }
    };
    let rhs = Rhs { sp: &sp, viscosity, forcing_hat, drag };
    let w0 = sp.forward(omega);
    let k1 = rhs.eval(&w0);
    let w1: Vec<Complex64> = w0.iter().zip(&k1).map(|(w, k)| w + k * dt).collect();
    let k2 = rhs.eval(&w1);
    let w2: Vec<Complex64> = (0..n * n).map(|i| w0[i] + (k1[i] + k2[i]) * (0.5 * dt)).collect();
    Ok(sp.inverse(&w2))
}
