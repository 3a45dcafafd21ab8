//! `SPUS` checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "SPUS" | version: u32 | entry count: u32
//! per entry: name length: u32 | name (UTF-8) | rank: u32 | dims: u32 × rank | dtype: u8
//! payloads in manifest order: f32 (dtype 0) or u32 (dtype 1) values
//! ```
//!
//! Model configuration, adapter field count, normalization statistics and
//! batchnorm running statistics are stored as named entries next to the
//! parameter tensors.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AdaptedModel, Adapters, Model, ModelConfig};
use crate::tensor::{Dims, RunningStats, Tensor4};
use crate::train::NormStats;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPUS";
pub const CHECKPOINT_VERSION: u32 = 1;

const CONFIG: &str = "config.model";
const ADAPTER: &str = "config.adapter";
const EPOCH: &str = "meta.epoch";
const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";

/// A trained model together with everything inference needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AdaptedModel,
    pub norm: NormStats,
    /// Epoch the weights come from; 0 for an untrained model.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn untrained(model: AdaptedModel) -> Self {
        let norm = NormStats::identity(model.fields());
        Self { model, norm, epoch: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Payload {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl Payload {
    fn tag(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::U32(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Entry {
    pub name: String,
    pub dims: Vec<u32>,
    pub payload: Payload,
}

impl Entry {
    fn f32(name: impl Into<String>, dims: Vec<u32>, values: impl IntoIterator<Item = f64>) -> Self {
        Self { name: name.into(), dims, payload: Payload::F32(values.into_iter().map(|v| v as f32).collect()) }
    }

    fn u32(name: impl Into<String>, values: Vec<u32>) -> Self {
        Self { name: name.into(), dims: vec![values.len() as u32], payload: Payload::U32(values) }
    }

    fn tensor(name: &str, t: &Tensor4) -> Self {
        let d = t.dims().as_array().map(|v| v as u32).to_vec();
        Self::f32(name, d, t.data().iter().copied())
    }
}

/// Little-endian cursor that reports truncation as corruption.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corruption(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))
    }

    pub fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(count.checked_mul(4).unwrap_or(usize::MAX), what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Corruption(format!(
                "{} unexpected trailing bytes after offset {}",
                self.bytes.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_magic(r: &mut Reader<'_>, magic: &[u8; 4], expected_version: u32) -> Result<()> {
    let found = r
        .take(4, "magic")
        .map_err(|_| Error::Format("file is too short to carry a header".into()))?;
    if found != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(found),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != expected_version {
        return Err(Error::Version { found: version, expected: expected_version });
    }
    Ok(())
}

pub(crate) fn encode_entries(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(e.payload.tag());
    }
    for e in entries {
        match &e.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out
}

pub(crate) fn decode_entries(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader::new(bytes);
    check_magic(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let count = r.u32("entry count")? as usize;
    let mut manifest = Vec::new();
    for i in 0..count {
        let name = r.string(&format!("name of entry {i}"))?;
        let rank = r.u32(&format!("rank of `{name}`"))? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("entry `{name}` has implausible rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32(&format!("dims of `{name}`"))).collect::<Result<Vec<_>>>()?;
        let tag = r.u8(&format!("dtype of `{name}`"))?;
        if tag > 1 {
            return Err(Error::Format(format!("entry `{name}` has unknown dtype tag {tag}")));
        }
        manifest.push((name, dims, tag));
    }
    let mut entries = Vec::with_capacity(count);
    for (name, dims, tag) in manifest {
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d as usize)).ok_or_else(|| {
            Error::Format(format!("entry `{name}` declares an overflowing size"))
        })?;
        let what = format!("payload of `{name}` ({len} values)");
        let payload = if tag == 0 {
            Payload::F32(r.f32s(len, &what)?)
        } else {
            let raw = r.take(len.checked_mul(4).unwrap_or(usize::MAX), &what)?;
            Payload::U32(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
        };
        entries.push(Entry { name, dims, payload });
    }
    r.finish()?;
    Ok(entries)
}

fn running_entries(name: &str, s: &RunningStats) -> [Entry; 3] {
    let c = s.channels() as u32;
    [
        Entry::f32(format!("{name}.running_mean"), vec![c], s.mean.iter().copied()),
        Entry::f32(format!("{name}.running_var"), vec![c], s.var.iter().copied()),
        Entry::u32(format!("{name}.tracked"), vec![s.tracked.min(u32::MAX as u64) as u32]),
    ]
}

fn to_entries(ck: &Checkpoint) -> Vec<Entry> {
    let c = ck.model.core.config();
    let mut out = vec![Entry::u32(
        CONFIG,
        [c.base_width, c.blocks_per_level, c.in_fields, c.height, c.width].map(|v| v as u32).to_vec(),
    )];
    if let Some(a) = &ck.model.adapters {
        out.push(Entry::u32(ADAPTER, vec![a.d_task as u32]));
    }
    out.push(Entry::u32(EPOCH, vec![ck.epoch as u32]));
    let d = ck.norm.fields() as u32;
    out.push(Entry::f32(NORM_MEAN, vec![d], ck.norm.mean.iter().copied()));
    out.push(Entry::f32(NORM_STD, vec![d], ck.norm.std.iter().copied()));
    for (name, t) in ck.model.core.params() {
        out.push(Entry::tensor(name, t));
    }
    if let Some(a) = &ck.model.adapters {
        for (name, t) in &a.params {
            out.push(Entry::tensor(name, t));
        }
    }
    for (name, s) in ck.model.core.norms() {
        out.extend(running_entries(name, s));
    }
    out
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Vec<u8> {
    encode_entries(&to_entries(ck))
}

struct Entries(BTreeMap<String, Entry>);

impl Entries {
    fn take(&mut self, name: &str) -> Result<Entry> {
        self.0.remove(name).ok_or_else(|| Error::Format(format!("missing entry `{name}`")))
    }

    fn u32s(&mut self, name: &str, len: usize) -> Result<Vec<u32>> {
        match self.take(name)?.payload {
            Payload::U32(v) if v.len() == len => Ok(v),
            _ => Err(Error::Format(format!("entry `{name}` must hold {len} u32 values"))),
        }
    }

    fn f64s(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        match self.take(name)?.payload {
            Payload::F32(v) if v.len() == len => Ok(v.into_iter().map(f64::from).collect()),
            _ => Err(Error::Format(format!("entry `{name}` must hold {len} f32 values"))),
        }
    }

    fn tensor(&mut self, name: &str) -> Result<Tensor4> {
        let e = self.take(name)?;
        let Payload::F32(v) = e.payload else {
            return Err(Error::Format(format!("parameter `{name}` must be f32")));
        };
        let [n, c, h, w] = <[u32; 4]>::try_from(e.dims)
            .map_err(|d| Error::Format(format!("parameter `{name}` has rank {}, expected 4", d.len())))?;
        Tensor4::new(Dims::new(n as usize, c as usize, h as usize, w as usize), v.into_iter().map(f64::from).collect())
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let list = decode_entries(bytes)?;
    let mut map = BTreeMap::new();
    for e in list {
        let name = e.name.clone();
        if map.insert(name.clone(), e).is_some() {
            return Err(Error::Format(format!("entry `{name}` appears twice")));
        }
    }
    let mut es = Entries(map);
    let cfg = es.u32s(CONFIG, 5)?;
    let config = ModelConfig {
        base_width: cfg[0] as usize,
        blocks_per_level: cfg[1] as usize,
        in_fields: cfg[2] as usize,
        height: cfg[3] as usize,
        width: cfg[4] as usize,
    };
    config.validate().map_err(|e| Error::Format(format!("stored model config is invalid: {e}")))?;
    let d_task = if es.0.contains_key(ADAPTER) { Some(es.u32s(ADAPTER, 1)?[0] as usize) } else { None };
    let epoch = es.u32s(EPOCH, 1)?[0] as usize;
    let fields = d_task.unwrap_or(config.in_fields);
    let norm = NormStats { mean: es.f64s(NORM_MEAN, fields)?, std: es.f64s(NORM_STD, fields)? };

    let template = crate::model::build_model(config, 0)?;
    let mut params = BTreeMap::new();
    for name in template.params().keys() {
        params.insert(name.clone(), es.tensor(name)?);
    }
    let mut norms = BTreeMap::new();
    for (name, s) in template.norms() {
        let c = s.channels();
        let mean = es.f64s(&format!("{name}.running_mean"), c)?;
        let var = es.f64s(&format!("{name}.running_var"), c)?;
        let tracked = es.u32s(&format!("{name}.tracked"), 1)?[0] as u64;
        norms.insert(name.clone(), RunningStats { mean, var, tracked });
    }
    let core = Model::from_parts(config, params, norms).map_err(|e| Error::Format(e.to_string()))?;
    let adapters = match d_task {
        None => None,
        Some(d) => {
            let template = Adapters::new(d, 0);
            let mut p = BTreeMap::new();
            for (name, t) in &template.params {
                let got = es.tensor(name)?;
                if got.dims() != t.dims() {
                    return Err(Error::Format(format!("adapter `{name}` has dims {}, expected {}", got.dims(), t.dims())));
                }
                p.insert(name.clone(), got);
            }
            Some(Adapters { d_task: d, params: p })
        }
    };
    if let Some(extra) = es.0.keys().next() {
        return Err(Error::Format(format!("unexpected entry `{extra}`")));
    }
    Ok(Checkpoint { model: AdaptedModel { core, adapters }, norm, epoch })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

/// Header summary without materializing the model.
pub fn checkpoint_manifest(bytes: &[u8]) -> Result<Vec<(String, Vec<u32>, &'static str)>> {
    Ok(decode_entries(bytes)?
        .into_iter()
        .map(|e| {
            let t = if e.payload.tag() == 0 { "f32" } else { "u32" };
            (e.name, e.dims, t)
        })
        .collect())
}
