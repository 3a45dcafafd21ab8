//! Seeded initial-condition generators.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::euler::{EulerState, Primitive};
use super::ns::{velocity_from_vorticity, NS_DOMAIN};
use super::spectral::{check_pow2, Spectral};
use super::wave::WaveState;
use super::PdeFamily;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IcKind {
    RiemannQuadrants,
    RiemannQuadrantsPerturbed,
    KelvinHelmholtzShear,
    GaussianVorticity,
    PiecewiseConstantVorticity,
    DoubleShearLayer,
    GaussianSumWave,
}

impl IcKind {
    pub const ALL: [IcKind; 7] = [
        IcKind::RiemannQuadrants,
        IcKind::RiemannQuadrantsPerturbed,
        IcKind::KelvinHelmholtzShear,
        IcKind::GaussianVorticity,
        IcKind::PiecewiseConstantVorticity,
        IcKind::DoubleShearLayer,
        IcKind::GaussianSumWave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IcKind::RiemannQuadrants => "riemann-quadrants",
            IcKind::RiemannQuadrantsPerturbed => "riemann-quadrants-perturbed",
            IcKind::KelvinHelmholtzShear => "kelvin-helmholtz-shear",
            IcKind::GaussianVorticity => "gaussian-vorticity",
            IcKind::PiecewiseConstantVorticity => "piecewise-constant-vorticity",
            IcKind::DoubleShearLayer => "double-shear-layer",
            IcKind::GaussianSumWave => "gaussian-sum-wave",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown initial condition `{name}`")))
    }

    pub fn supports(self, family: PdeFamily) -> bool {
        use IcKind::*;
        match family {
            PdeFamily::Euler => {
                matches!(self, RiemannQuadrants | RiemannQuadrantsPerturbed | KelvinHelmholtzShear | GaussianVorticity)
            }
            PdeFamily::NavierStokes => {
                matches!(self, GaussianVorticity | PiecewiseConstantVorticity | DoubleShearLayer)
            }
            PdeFamily::Wave => self == GaussianSumWave,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcSpec {
    pub kind: IcKind,
    pub seed: u64,
    /// Multiplies velocities, vorticity and displacement amplitudes.
    pub amplitude: f64,
    /// Multiplies length scales: Gaussian widths, interface jitter, layer thickness.
    pub scale: f64,
    /// Fixed quadrant states (SW, SE, NW, NE) instead of seeded ones.
    pub quadrants: Option<[Primitive; 4]>,
}

impl IcSpec {
    pub fn new(kind: IcKind, seed: u64) -> Self {
        Self { kind, seed, amplitude: 1.0, scale: 1.0, quadrants: None }
    }
}

/// Solver-ready initial state.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Euler(EulerState),
    Vorticity { n: usize, omega: Vec<f64> },
    Wave { state: WaveState, speed: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VortexBlob {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

/// Periodic minimum-image offset on a domain of the given length.
fn wrap(d: f64, length: f64) -> f64 {
    d - length * (d / length).round()
}

/// Sum of periodic Gaussian vortices sampled at grid nodes `(i·h, j·h)`.
pub fn gaussian_vorticity(n: usize, length: f64, blobs: &[VortexBlob]) -> Vec<f64> {
    let h = length / n as f64;
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let (x, y) = (c as f64 * h, r as f64 * h);
            out[r * n + c] = blobs
                .iter()
                .map(|b| {
                    let dx = wrap(x - b.x, length);
                    let dy = wrap(y - b.y, length);
                    b.amplitude * (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp()
                })
                .sum();
        }
    }
    out
}

/// Four constant states split at `(x0, y0)` on the unit square.
pub fn riemann_quadrants(ny: usize, nx: usize, gamma: f64, states: [Primitive; 4], x0: f64, y0: f64) -> EulerState {
    EulerState::from_primitive(ny, nx, gamma, |r, c| {
        let x = (c as f64 + 0.5) / nx as f64;
        let y = (r as f64 + 0.5) / ny as f64;
        states[usize::from(x >= x0) + 2 * usize::from(y >= y0)]
    })
}

fn random_state(rng: &mut ChaCha8Rng, amplitude: f64) -> Primitive {
    Primitive::new(
        rng.gen_range(0.5..1.5),
        amplitude * rng.gen_range(-0.5..0.5),
        amplitude * rng.gen_range(-0.5..0.5),
        rng.gen_range(0.5..1.5),
    )
}

fn random_blobs(rng: &mut ChaCha8Rng, length: f64, amplitude: f64, scale: f64, strength: (f64, f64)) -> Vec<VortexBlob> {
    let count = rng.gen_range(2..=4);
    (0..count)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            VortexBlob {
                x: rng.gen_range(0.0..length),
                y: rng.gen_range(0.0..length),
                amplitude: sign * amplitude * rng.gen_range(strength.0..strength.1),
                sigma: length * scale * rng.gen_range(0.04..0.07),
            }
        })
        .collect()
}

fn remove_mean(f: &mut [f64]) {
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    f.iter_mut().for_each(|v| *v -= mean);
}

fn ns_vorticity(n: usize, spec: &IcSpec, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    check_pow2(n, n)?;
    let h = NS_DOMAIN / n as f64;
    let mut omega = match spec.kind {
        IcKind::GaussianVorticity => {
            let blobs = random_blobs(rng, NS_DOMAIN, spec.amplitude, spec.scale, (2.0, 5.0));
            gaussian_vorticity(n, NS_DOMAIN, &blobs)
        }
        IcKind::PiecewiseConstantVorticity => {
            // Periodic Voronoi cells with random constant values, lightly smoothed
            // so the spectral solver does not ring at the jumps.
            let cells = rng.gen_range(4..=8);
            let sites: Vec<(f64, f64, f64)> = (0..cells)
                .map(|_| {
                    (
                        rng.gen_range(0.0..NS_DOMAIN),
                        rng.gen_range(0.0..NS_DOMAIN),
                        3.0 * spec.amplitude * rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let raw: Vec<f64> = (0..n * n)
                .map(|i| {
                    let (x, y) = ((i % n) as f64 * h, (i / n) as f64 * h);
                    let nearest = sites
                        .iter()
                        .min_by(|a, b| {
                            let da = wrap(x - a.0, NS_DOMAIN).powi(2) + wrap(y - a.1, NS_DOMAIN).powi(2);
                            let db = wrap(x - b.0, NS_DOMAIN).powi(2) + wrap(y - b.1, NS_DOMAIN).powi(2);
                            da.total_cmp(&db)
                        })
                        .expect("at least one site");
                    nearest.2
                })
                .collect();
            let sp = Spectral::new(n, NS_DOMAIN)?;
            let sigma = 1.5 * h * spec.scale;
            let mut s = sp.forward(&raw);
            for r in 0..n {
                for c in 0..n {
                    s[r * n + c] *= (-0.5 * sp.k2(r, c) * sigma * sigma).exp();
                }
            }
            sp.inverse(&s)
        }
        IcKind::DoubleShearLayer => {
            let rho = PI / 15.0 * spec.scale * rng.gen_range(0.8..1.2);
            let delta = 0.05 * spec.amplitude;
            let phase = rng.gen_range(0.0..2.0 * PI);
            (0..n * n)
                .map(|i| {
                    let (x, y) = ((i % n) as f64 * h, (i / n) as f64 * h);
                    let du_dy = if y <= PI {
                        1.0 / ((y - PI / 2.0) / rho).cosh().powi(2) / rho
                    } else {
                        -1.0 / ((1.5 * PI - y) / rho).cosh().powi(2) / rho
                    };
                    delta * (x + phase).cos() - du_dy
                })
                .collect()
        }
        other => return Err(Error::Config(format!("`{}` is not a Navier-Stokes initial condition", other.name()))),
    };
    remove_mean(&mut omega);
    Ok(omega)
}

fn euler_state(h: usize, w: usize, gamma: f64, spec: &IcSpec, rng: &mut ChaCha8Rng) -> Result<EulerState> {
    let states = |rng: &mut ChaCha8Rng| match spec.quadrants {
        Some(q) => q,
        None => std::array::from_fn(|_| random_state(rng, spec.amplitude)),
    };
    Ok(match spec.kind {
        IcKind::RiemannQuadrants => riemann_quadrants(h, w, gamma, states(rng), 0.5, 0.5),
        IcKind::RiemannQuadrantsPerturbed => {
            let q = states(rng);
            let s = spec.scale;
            let x0 = 0.5 + s * rng.gen_range(-0.1..0.1);
            let y0 = 0.5 + s * rng.gen_range(-0.1..0.1);
            let wiggle: [(f64, f64, f64); 2] = std::array::from_fn(|_| {
                (s * rng.gen_range(0.0..0.03), rng.gen_range(1..=3) as f64, rng.gen_range(0.0..2.0 * PI))
            });
            EulerState::from_primitive(h, w, gamma, |r, c| {
                let x = (c as f64 + 0.5) / w as f64;
                let y = (r as f64 + 0.5) / h as f64;
                let xi = x0 + wiggle[0].0 * (2.0 * PI * wiggle[0].1 * y + wiggle[0].2).sin();
                let yi = y0 + wiggle[1].0 * (2.0 * PI * wiggle[1].1 * x + wiggle[1].2).sin();
                q[usize::from(x >= xi) + 2 * usize::from(y >= yi)]
            })
        }
        IcKind::KelvinHelmholtzShear => {
            let thick = 0.025 * spec.scale;
            let modes: Vec<(f64, f64)> =
                (1..=4).map(|_| (spec.amplitude * rng.gen_range(0.0..0.05), rng.gen_range(0.0..2.0 * PI))).collect();
            let sigma = 0.05 * spec.scale;
            EulerState::from_primitive(h, w, gamma, |r, c| {
                let x = (c as f64 + 0.5) / w as f64;
                let y = (r as f64 + 0.5) / h as f64;
                let band = ((y - 0.25) / thick).tanh() - ((y - 0.75) / thick).tanh() - 1.0;
                let envelope = (-(y - 0.25).powi(2) / (2.0 * sigma * sigma)).exp()
                    + (-(y - 0.75).powi(2) / (2.0 * sigma * sigma)).exp();
                let v: f64 = modes
                    .iter()
                    .enumerate()
                    .map(|(m, (a, ph))| a * (2.0 * PI * (m + 1) as f64 * x + ph).sin())
                    .sum();
                Primitive::new(1.5 + 0.5 * band, 0.5 * spec.amplitude * band, v * envelope, 2.5)
            })
        }
        IcKind::GaussianVorticity => {
            check_pow2(h, w)?;
            let blobs = random_blobs(rng, NS_DOMAIN, 1.0, spec.scale, (2.0, 5.0));
            let mut omega = gaussian_vorticity(w, NS_DOMAIN, &blobs);
            remove_mean(&mut omega);
            let (u, v) = velocity_from_vorticity(&omega, w)?;
            let peak = u.iter().chain(&v).fold(0.0f64, |m, x| m.max(x.abs()));
            let k = if peak > 0.0 { 0.3 * spec.amplitude / peak } else { 0.0 };
            EulerState::from_primitive(h, w, gamma, |r, c| {
                let i = r * w + c;
                Primitive::new(1.0, k * u[i], k * v[i], 1.0)
            })
        }
        other => return Err(Error::Config(format!("`{}` is not an Euler initial condition", other.name()))),
    })
}

fn wave_state(n: usize, spec: &IcSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let bumps = rng.gen_range(2..=4);
    let mut w = vec![0.0; n * n];
    let mut speed = vec![1.0; n * n];
    let h = 1.0 / n as f64;
    let gauss = |cx: f64, cy: f64, s: f64, r: usize, c: usize| {
        let dx = wrap((c as f64 + 0.5) * h - cx, 1.0);
        let dy = wrap((r as f64 + 0.5) * h - cy, 1.0);
        (-(dx * dx + dy * dy) / (2.0 * s * s)).exp()
    };
    for _ in 0..bumps {
        let (cx, cy) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let s = spec.scale * rng.gen_range(0.04..0.08);
        let a = spec.amplitude * rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for r in 0..n {
            for c in 0..n {
                w[r * n + c] += a * gauss(cx, cy, s, r, c);
            }
        }
    }
    for _ in 0..rng.gen_range(1..=3) {
        let (cx, cy) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let s = rng.gen_range(0.1..0.2);
        let b = rng.gen_range(0.0..0.8);
        for r in 0..n {
            for c in 0..n {
                speed[r * n + c] += b * gauss(cx, cy, s, r, c);
            }
        }
    }
    (w, speed)
}

/// Seeded initial state for `family` on an `h × w` grid.
pub fn gen_initial_condition(family: PdeFamily, spec: &IcSpec, h: usize, w: usize, gamma: f64) -> Result<InitialState> {
    if !spec.kind.supports(family) {
        return Err(Error::Config(format!(
            "initial condition `{}` is not defined for the {} family",
            spec.kind.name(),
            family.tag()
        )));
    }
    if h < 2 || w < 2 || !(spec.amplitude.is_finite() && spec.scale > 0.0) {
        return Err(Error::Config(format!(
            "need a grid of at least 2x2 and finite positive parameters, got {h}x{w}, amplitude {}, scale {}",
            spec.amplitude, spec.scale
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let state = match family {
        PdeFamily::Euler => InitialState::Euler(euler_state(h, w, gamma, spec, &mut rng)?),
        PdeFamily::NavierStokes => {
            check_pow2(h, w)?;
            InitialState::Vorticity { n: w, omega: ns_vorticity(w, spec, &mut rng)? }
        }
        PdeFamily::Wave => {
            if h != w {
                return Err(Error::Config(format!("wave solver needs a square grid, got {h}x{w}")));
            }
            let (disp, speed) = wave_state(w, spec, &mut rng);
            InitialState::Wave { state: WaveState { n: w, w_prev: disp.clone(), w: disp }, speed }
        }
    };
    Ok(state)
}
