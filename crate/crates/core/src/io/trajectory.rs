//! `PDET` trajectory files.
//!
//! ```text
//! "PDET" | version: u32 | family tag: u8 | d: u32 | d × (name length: u32, name)
//! | H: u32 | W: u32 | snapshots: u32 | dt: f64 | seed: u64
//! | f32 data in [t][field][row][col] order
//! ```

use std::path::Path;

use super::checkpoint::{check_magic, Reader};
use crate::error::{Error, Result};
use crate::pde::{PdeFamily, Trajectory};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"PDET";
pub const TRAJECTORY_VERSION: u32 = 1;

/// Header fields of a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryHeader {
    pub family: PdeFamily,
    pub field_names: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub snapshots: usize,
    pub dt: f64,
    pub seed: u64,
}

pub fn trajectory_to_bytes(t: &Trajectory) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * t.data().len());
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.extend_from_slice(&TRAJECTORY_VERSION.to_le_bytes());
    out.push(t.family.tag_byte());
    out.extend_from_slice(&(t.field_count() as u32).to_le_bytes());
    for name in &t.field_names {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for v in [t.height, t.width, t.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&t.dt.to_le_bytes());
    out.extend_from_slice(&t.seed.to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn read_header(r: &mut Reader<'_>) -> Result<TrajectoryHeader> {
    check_magic(r, TRAJECTORY_MAGIC, TRAJECTORY_VERSION)?;
    let tag = r.u8("family tag")?;
    let family = PdeFamily::from_tag_byte(tag).ok_or_else(|| Error::Format(format!("unknown family tag {tag}")))?;
    let d = r.u32("field count")? as usize;
    if d != family.field_count() {
        return Err(Error::Format(format!(
            "header declares {d} fields but the {} family has {}",
            family.tag(),
            family.field_count()
        )));
    }
    let field_names = (0..d).map(|i| r.string(&format!("field name {i}"))).collect::<Result<Vec<_>>>()?;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let snapshots = r.u32("snapshot count")? as usize;
    let dt = r.f64("dt")?;
    let seed = r.u64("seed")?;
    Ok(TrajectoryHeader { family, field_names, height, width, snapshots, dt, seed })
}

pub fn trajectory_header(bytes: &[u8]) -> Result<TrajectoryHeader> {
    read_header(&mut Reader::new(bytes))
}

pub fn trajectory_from_bytes(bytes: &[u8]) -> Result<Trajectory> {
    let mut r = Reader::new(bytes);
    let h = read_header(&mut r)?;
    let count = [h.snapshots, h.field_names.len(), h.height, h.width]
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| Error::Format("declared trajectory size overflows".into()))?;
    let data: Vec<f64> = r.f32s(count, "trajectory data")?.into_iter().map(f64::from).collect();
    r.finish()?;
    Trajectory::new(h.family, h.height, h.width, h.field_names, h.dt, h.seed, data)
        .map_err(|e| Error::Format(format!("trajectory payload rejected: {e}")))
}

pub fn write_trajectory(t: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, trajectory_to_bytes(t))?;
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    trajectory_from_bytes(&std::fs::read(path)?)
}
