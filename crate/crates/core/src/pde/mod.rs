//! PDE solvers and trajectory generation for the three data families.

pub mod euler;
pub mod ic;
pub mod ns;
pub mod spectral;
pub mod wave;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor4};

pub use euler::{step_euler, EulerState, Primitive, EULER_CFL, GAS_GAMMA};
pub use ic::{gaussian_vorticity, gen_initial_condition, riemann_quadrants, IcKind, IcSpec, InitialState, VortexBlob};
pub use ns::{poisson_solve_periodic, step_ns, velocity_from_vorticity, Forcing, NS_CFL, NS_DOMAIN};
pub use wave::{step_wave, WaveState};

/// Snapshot intervals per trajectory (21 stored states).
pub const DEFAULT_INTERVALS: usize = 20;
/// Wave trajectories are shorter (15 stored states).
pub const WAVE_INTERVALS: usize = 14;
/// Courant number for the wave substeps, relative to the leapfrog limit.
pub const WAVE_CFL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PdeFamily {
    Euler,
    NavierStokes,
    Wave,
}

impl PdeFamily {
    pub const ALL: [PdeFamily; 3] = [PdeFamily::Euler, PdeFamily::NavierStokes, PdeFamily::Wave];

    pub fn tag(self) -> &'static str {
        match self {
            PdeFamily::Euler => "euler",
            PdeFamily::NavierStokes => "navier-stokes",
            PdeFamily::Wave => "wave",
        }
    }

    pub fn tag_byte(self) -> u8 {
        match self {
            PdeFamily::Euler => 0,
            PdeFamily::NavierStokes => 1,
            PdeFamily::Wave => 2,
        }
    }

    pub fn from_tag_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.tag_byte() == b)
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.tag() == tag)
            .ok_or_else(|| Error::Config(format!("unknown PDE family `{tag}`")))
    }

    pub fn field_names(self) -> &'static [&'static str] {
        match self {
            PdeFamily::Euler => &["rho", "u", "v", "p", "E"],
            PdeFamily::NavierStokes => &["u", "v"],
            PdeFamily::Wave => &["w"],
        }
    }

    pub fn field_count(self) -> usize {
        self.field_names().len()
    }

    pub fn default_intervals(self) -> usize {
        match self {
            PdeFamily::Wave => WAVE_INTERVALS,
            _ => DEFAULT_INTERVALS,
        }
    }
}

/// Physical parameters for a generation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Physical time covered by the stored snapshots.
    pub horizon: f64,
    pub gas_gamma: f64,
    pub viscosity: f64,
    pub forcing: Forcing,
}

impl SolverParams {
    pub fn default_for(family: PdeFamily) -> Self {
        let horizon = match family {
            PdeFamily::Euler => 0.2,
            PdeFamily::NavierStokes => 2.0,
            PdeFamily::Wave => 0.5,
        };
        Self { horizon, gas_gamma: GAS_GAMMA, viscosity: 1e-3, forcing: Forcing::None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub family: PdeFamily,
    pub height: usize,
    pub width: usize,
    pub field_names: Vec<String>,
    /// Physical time between stored snapshots.
    pub dt: f64,
    pub seed: u64,
    snapshots: usize,
    data: Vec<f64>,
}

impl Trajectory {
    /// Builds a trajectory from `[t][field][row][col]` data.
    pub fn new(
        family: PdeFamily,
        height: usize,
        width: usize,
        field_names: Vec<String>,
        dt: f64,
        seed: u64,
        data: Vec<f64>,
    ) -> Result<Self> {
        let d = field_names.len();
        if d != family.field_count() {
            return Err(Error::Data(format!(
                "{} trajectories carry {} fields, got {d}",
                family.tag(),
                family.field_count()
            )));
        }
        let frame = d * height * width;
        if frame == 0 || data.len() % frame != 0 || data.is_empty() {
            return Err(Error::Data(format!(
                "{} values do not form whole {d}x{height}x{width} snapshots",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("trajectory value {i} is {}", data[i])));
        }
        Ok(Self { family, height, width, field_names, dt, seed, snapshots: data.len() / frame, data })
    }

    pub fn field_count(&self) -> usize {
        self.field_names.len()
    }

    /// Number of stored states (intervals + 1).
    pub fn len(&self) -> usize {
        self.snapshots
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.field_count() * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Snapshot `t` as a `[1, d, H, W]` tensor.
    pub fn snapshot(&self, t: usize) -> Result<Tensor4> {
        if t >= self.snapshots {
            return Err(Error::Contract(format!("snapshot {t} out of range 0..{}", self.snapshots)));
        }
        Tensor4::new(Dims::new(1, self.field_count(), self.height, self.width), self.frame(t).to_vec())
    }
}

fn frame_of(state: &InitialState, gamma: f64) -> Result<Vec<f64>> {
    Ok(match state {
        InitialState::Euler(s) => {
            let n = s.rho.len();
            let mut out = vec![0.0; 5 * n];
            for i in 0..n {
                let q = s.primitive(i, gamma);
                // E is stored from the ideal-gas relation, which is exactly the
                // conserved energy variable up to rounding.
                for (f, v) in [q.rho, q.u, q.v, q.p, q.energy(gamma)].into_iter().enumerate() {
                    out[f * n + i] = v;
                }
            }
            out
        }
        InitialState::Vorticity { n, omega } => {
            let (u, v) = velocity_from_vorticity(omega, *n)?;
            [u, v].concat()
        }
        InitialState::Wave { state, .. } => state.w.clone(),
    })
}

/// Advances `state` by exactly `interval` of physical time with CFL-limited substeps.
fn advance(state: InitialState, interval: f64, p: &SolverParams) -> Result<InitialState> {
    Ok(match state {
        InitialState::Euler(mut s) => {
            let mut remaining = interval;
            while remaining > interval * 1e-12 {
                let dt = s.max_dt(p.gas_gamma, EULER_CFL).min(remaining);
                s = step_euler(&s, dt, p.gas_gamma)?;
                remaining -= dt;
            }
            InitialState::Euler(s)
        }
        InitialState::Vorticity { n, mut omega } => {
            let mut remaining = interval;
            while remaining > interval * 1e-12 {
                let dt = ns::max_dt(&omega, n, p.viscosity, NS_CFL)?.min(remaining);
                omega = step_ns(&omega, n, dt, p.viscosity, p.forcing)?;
                if let Some(i) = omega.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Stability(format!("vorticity became non-finite at cell {i}")));
                }
                remaining -= dt;
            }
            InitialState::Vorticity { n, omega }
        }
        InitialState::Wave { .. } => unreachable!("wave trajectories use a fixed step"),
    })
}

/// Runs the family's solver from a seeded initial condition and records
/// `intervals + 1` states equispaced over `params.horizon`.
pub fn generate_trajectory(
    family: PdeFamily,
    spec: &IcSpec,
    height: usize,
    width: usize,
    intervals: usize,
    params: &SolverParams,
) -> Result<Trajectory> {
    if intervals == 0 || !(params.horizon > 0.0) || !params.horizon.is_finite() {
        return Err(Error::Contract(format!(
            "need at least one interval and a positive horizon, got {intervals} over {}",
            params.horizon
        )));
    }
    let interval = params.horizon / intervals as f64;
    let seed = spec.seed;
    let tag = |e: Error| match e {
        Error::Stability(msg) => Error::Stability(format!("trajectory seed {seed}: {msg}")),
        Error::StepSize { dt, limit } => {
            Error::Stability(format!("trajectory seed {seed}: step {dt:.3e} exceeds limit {limit:.3e}"))
        }
        other => other,
    };
    let mut state = gen_initial_condition(family, spec, height, width, params.gas_gamma)?;
    let mut data = frame_of(&state, params.gas_gamma)?;
    if let InitialState::Wave { state: ws, speed } = state {
        let limit = WAVE_CFL * wave::cfl_limit(ws.n, &speed);
        let sub = (interval / limit).ceil().max(1.0) as usize;
        let dt = interval / sub as f64;
        // Zero initial velocity: second-order start from a Taylor expansion.
        let lap = wave::laplacian(&ws.w, ws.n);
        let w_prev = (0..ws.w.len()).map(|i| ws.w[i] + 0.5 * dt * dt * speed[i] * speed[i] * lap[i]).collect();
        let mut ws = WaveState { w_prev, ..ws };
        for _ in 0..intervals {
            for _ in 0..sub {
                ws = step_wave(&ws, dt, &speed).map_err(tag)?;
            }
            data.extend_from_slice(&ws.w);
        }
    } else {
        for _ in 0..intervals {
            state = advance(state, interval, params).map_err(tag)?;
            data.extend(frame_of(&state, params.gas_gamma)?);
        }
    }
    let names = family.field_names().iter().map(|s| s.to_string()).collect();
    Trajectory::new(family, height, width, names, interval, seed, data).map_err(tag)
}

/// Named dataset recipes mirroring the pretraining and downstream families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub family: PdeFamily,
    pub kind: IcKind,
    pub scale: f64,
    pub forcing: Forcing,
}

pub const PRESETS: [Preset; 10] = [
    Preset { name: "ce-rp", family: PdeFamily::Euler, kind: IcKind::RiemannQuadrants, scale: 1.0, forcing: Forcing::None },
    Preset { name: "ce-crp", family: PdeFamily::Euler, kind: IcKind::RiemannQuadrantsPerturbed, scale: 2.0, forcing: Forcing::None },
    Preset { name: "ce-kh", family: PdeFamily::Euler, kind: IcKind::KelvinHelmholtzShear, scale: 1.0, forcing: Forcing::None },
    Preset { name: "ce-gauss", family: PdeFamily::Euler, kind: IcKind::GaussianVorticity, scale: 1.0, forcing: Forcing::None },
    Preset { name: "ce-rpui", family: PdeFamily::Euler, kind: IcKind::RiemannQuadrantsPerturbed, scale: 1.0, forcing: Forcing::None },
    Preset { name: "ns-gauss", family: PdeFamily::NavierStokes, kind: IcKind::GaussianVorticity, scale: 1.0, forcing: Forcing::None },
    Preset { name: "ns-pwc", family: PdeFamily::NavierStokes, kind: IcKind::PiecewiseConstantVorticity, scale: 1.0, forcing: Forcing::None },
    Preset { name: "ns-sl", family: PdeFamily::NavierStokes, kind: IcKind::DoubleShearLayer, scale: 1.0, forcing: Forcing::None },
    Preset {
        name: "fns-kf",
        family: PdeFamily::NavierStokes,
        kind: IcKind::GaussianVorticity,
        scale: 1.0,
        forcing: Forcing::Kolmogorov { amplitude: 1.0, wavenumber: 4, drag: 0.1 },
    },
    Preset { name: "wave-gauss", family: PdeFamily::Wave, kind: IcKind::GaussianSumWave, scale: 1.0, forcing: Forcing::None },
];

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::Config(format!("unknown dataset `{name}`; known: {}", known.join(", ")))
    })
}

impl Preset {
    pub fn params(&self) -> SolverParams {
        SolverParams { forcing: self.forcing, ..SolverParams::default_for(self.family) }
    }

    pub fn ic(&self, seed: u64) -> IcSpec {
        IcSpec { scale: self.scale, ..IcSpec::new(self.kind, seed) }
    }

    pub fn generate(&self, seed: u64, height: usize, width: usize) -> Result<Trajectory> {
        generate_trajectory(self.family, &self.ic(seed), height, width, self.family.default_intervals(), &self.params())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_snapshot_counts() {
        let t = preset("ce-rp").unwrap().generate(1, 16, 16).unwrap();
        assert_eq!(t.len(), 21);
        assert_eq!(t.field_count(), 5);
        let w = preset("wave-gauss").unwrap().generate(1, 16, 16).unwrap();
        assert_eq!(w.len(), 15);
    }

    #[test]
    fn zero_horizon_rejected() {
        let p = SolverParams { horizon: 0.0, ..SolverParams::default_for(PdeFamily::Euler) };
        let spec = IcSpec::new(IcKind::RiemannQuadrants, 0);
        assert!(matches!(generate_trajectory(PdeFamily::Euler, &spec, 8, 8, 20, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn seeds_differ_and_repeat() {
        let p = preset("ns-sl").unwrap();
        let a = p.generate(4, 16, 16).unwrap();
        let b = p.generate(4, 16, 16).unwrap();
        let c = p.generate(5, 16, 16).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.frame(0), c.frame(0));
    }

    #[test]
    fn euler_energy_field_matches_ideal_gas() {
        let t = preset("ce-kh").unwrap().generate(2, 16, 16).unwrap();
        let n = 16 * 16;
        let f = t.frame(3);
        for i in 0..n {
            let (rho, u, v, p, e) = (f[i], f[n + i], f[2 * n + i], f[3 * n + i], f[4 * n + i]);
            assert!(rho > 0.0 && p > 0.0);
            assert!((e - (p / 0.4 + 0.5 * rho * (u * u + v * v))).abs() < 1e-12 * e.abs().max(1.0));
        }
    }
}
