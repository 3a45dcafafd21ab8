//! First-order finite-volume solver for the 2-D compressible Euler equations
//! with Rusanov (local Lax-Friedrichs) fluxes on a periodic unit square.

use crate::error::{Error, Result};

/// Ideal-gas ratio of specific heats.
pub const GAS_GAMMA: f64 = 1.4;
/// Courant number used when choosing substeps.
pub const EULER_CFL: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub rho: f64,
    pub u: f64,
    pub v: f64,
    pub p: f64,
}

impl Primitive {
    pub const fn new(rho: f64, u: f64, v: f64, p: f64) -> Self {
        Self { rho, u, v, p }
    }

    /// Total energy per unit volume.
    pub fn energy(&self, gamma: f64) -> f64 {
        self.p / (gamma - 1.0) + 0.5 * self.rho * (self.u * self.u + self.v * self.v)
    }
}

/// Conserved variables on an `ny × nx` cell grid (row = y index).
#[derive(Debug, Clone, PartialEq)]
pub struct EulerState {
    pub ny: usize,
    pub nx: usize,
    pub rho: Vec<f64>,
    pub mx: Vec<f64>,
    pub my: Vec<f64>,
    pub energy: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Cons([f64; 4]);

impl EulerState {
    pub fn from_primitive(ny: usize, nx: usize, gamma: f64, f: impl Fn(usize, usize) -> Primitive) -> Self {
        let mut s = Self {
            ny,
            nx,
            rho: vec![0.0; ny * nx],
            mx: vec![0.0; ny * nx],
            my: vec![0.0; ny * nx],
            energy: vec![0.0; ny * nx],
        };
        for r in 0..ny {
            for c in 0..nx {
                let q = f(r, c);
                let i = r * nx + c;
                s.rho[i] = q.rho;
                s.mx[i] = q.rho * q.u;
                s.my[i] = q.rho * q.v;
                s.energy[i] = q.energy(gamma);
            }
        }
        s
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn primitive(&self, i: usize, gamma: f64) -> Primitive {
        let rho = self.rho[i];
        let u = self.mx[i] / rho;
        let v = self.my[i] / rho;
        let p = (gamma - 1.0) * (self.energy[i] - 0.5 * rho * (u * u + v * v));
        Primitive { rho, u, v, p }
    }

    /// Integrals of (mass, x-momentum, y-momentum, energy) over the domain.
    pub fn totals(&self) -> [f64; 4] {
        let area = self.dx() * self.dy();
        [&self.rho, &self.mx, &self.my, &self.energy].map(|f| f.iter().sum::<f64>() * area)
    }

    fn cons(&self, i: usize) -> Cons {
        Cons([self.rho[i], self.mx[i], self.my[i], self.energy[i]])
    }

    /// Largest stable step at Courant number `cfl`.
    pub fn max_dt(&self, gamma: f64, cfl: f64) -> f64 {
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for i in 0..self.rho.len() {
            let q = self.primitive(i, gamma);
            let a = (gamma * q.p / q.rho).max(0.0).sqrt();
            sx = sx.max(q.u.abs() + a);
            sy = sy.max(q.v.abs() + a);
        }
        let rate = sx / self.dx() + sy / self.dy();
        if rate > 0.0 {
            cfl / rate
        } else {
            f64::INFINITY
        }
    }
}

/// Physical flux along `normal` (0 = x, 1 = y) and the local wave speed.
fn flux(q: Cons, normal: usize, gamma: f64) -> ([f64; 4], f64) {
    let [rho, mx, my, e] = q.0;
    let u = mx / rho;
    let v = my / rho;
    let p = (gamma - 1.0) * (e - 0.5 * rho * (u * u + v * v));
    let a = (gamma * p / rho).max(0.0).sqrt();
    if normal == 0 {
        ([mx, mx * u + p, my * u, (e + p) * u], u.abs() + a)
    } else {
        ([my, mx * v, my * v + p, (e + p) * v], v.abs() + a)
    }
}

fn rusanov(l: Cons, r: Cons, normal: usize, gamma: f64) -> [f64; 4] {
    let (fl, sl) = flux(l, normal, gamma);
    let (fr, sr) = flux(r, normal, gamma);
    let s = sl.max(sr);
    std::array::from_fn(|k| 0.5 * (fl[k] + fr[k]) - 0.5 * s * (r.0[k] - l.0[k]))
}

/// One explicit Rusanov update on the periodic grid.
///
/// Rejects steps beyond the unit-Courant stability bound and reports the
/// first cell whose density or pressure turns non-positive.
pub fn step_euler(state: &EulerState, dt: f64, gamma: f64) -> Result<EulerState> {
    let limit = state.max_dt(gamma, 1.0);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, limit });
    }
    let (ny, nx) = (state.ny, state.nx);
    let n = ny * nx;
    // fx[i] is the flux through the east face of cell i, fy[i] the north face.
    let mut fx = vec![[0.0; 4]; n];
    let mut fy = vec![[0.0; 4]; n];
    for r in 0..ny {
        for c in 0..nx {
            let i = r * nx + c;
            let east = r * nx + (c + 1) % nx;
            let north = ((r + 1) % ny) * nx + c;
            fx[i] = rusanov(state.cons(i), state.cons(east), 0, gamma);
            fy[i] = rusanov(state.cons(i), state.cons(north), 1, gamma);
        }
    }
    let (ax, ay) = (dt / state.dx(), dt / state.dy());
    let mut next = state.clone();
    for r in 0..ny {
        for c in 0..nx {
            let i = r * nx + c;
            let west = r * nx + (c + nx - 1) % nx;
            let south = ((r + ny - 1) % ny) * nx + c;
            let mut q = state.cons(i).0;
            for k in 0..4 {
                q[k] -= ax * (fx[i][k] - fx[west][k]) + ay * (fy[i][k] - fy[south][k]);
            }
            next.rho[i] = q[0];
            next.mx[i] = q[1];
            next.my[i] = q[2];
            next.energy[i] = q[3];
            let prim = next.primitive(i, gamma);
            if !(prim.rho > 0.0) || !(prim.p > 0.0) {
                return Err(Error::Stability(format!(
                    "cell (row {r}, col {c}) has rho = {:.3e}, p = {:.3e} after the update",
                    prim.rho, prim.p
                )));
            }
        }
    }
    Ok(next)
}
