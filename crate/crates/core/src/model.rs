//! The residual U-Net surrogate and its 1×1 input/output adapters.
//!
//! Layout for base width `w` and `d` fields (each level has
//! `blocks_per_level` residual blocks, the first of which changes width):
//!
//! ```text
//! stem    3×3 d→w
//! enc0    w  @ H      ─ skip0 ─┐   down0 3×3/2
//! enc1    2w @ H/2    ─ skip1 ─┼┐  down1 3×3/2
//! enc2    2w @ H/4    ─ skip2 ─┼┼┐ down2 3×3/2
//! enc3    4w @ H/8             │││
//! mid     4w @ H/8             │││
//! up0 4w→2w, concat skip2, dec0 → 2w @ H/4
//! up1 2w→2w, concat skip1, dec1 → 2w @ H/2
//! up2 2w→w,  concat skip0, dec2 → w  @ H
//! head    3×3 w→d
//! ```

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchMoments, Graph, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{ConvSpec, Dims, Mode, RunningStats, Tensor4};

/// Field count of the pretrained core (ρ, u, v, p, E).
pub const CORE_FIELDS: usize = 5;
/// Number of encoder levels; the grid must be divisible by `2^(LEVELS-1)`.
pub const LEVELS: usize = 4;
const PAPER_BASE_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub base_width: usize,
    pub blocks_per_level: usize,
    pub in_fields: usize,
    pub height: usize,
    pub width: usize,
}

impl ModelConfig {
    /// Published layout: level widths 32, 64, 64, 128 with two blocks per level.
    pub fn paper(in_fields: usize, height: usize, width: usize) -> Self {
        Self { base_width: PAPER_BASE_WIDTH, blocks_per_level: 2, in_fields, height, width }
    }

    /// Scales every channel count of the published layout.
    pub fn with_width_multiplier(mut self, multiplier: f64) -> Self {
        self.base_width = ((PAPER_BASE_WIDTH as f64) * multiplier).round().max(1.0) as usize;
        self
    }

    pub fn with_base_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1 << (LEVELS - 1);
        if self.height == 0 || self.width == 0 || self.height % div != 0 || self.width % div != 0 {
            return Err(Error::Config(format!(
                "grid {}x{} must be a non-zero multiple of {div}",
                self.height, self.width
            )));
        }
        if self.base_width == 0 || self.blocks_per_level == 0 || self.in_fields == 0 {
            return Err(Error::Config(
                "base_width, blocks_per_level and in_fields must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Encoder widths per level: `[w, 2w, 2w, 4w]`.
    pub fn level_channels(&self) -> [usize; LEVELS] {
        let w = self.base_width;
        [w, 2 * w, 2 * w, 4 * w]
    }
}

/// Channel plan of one residual block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub prefix: String,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl BlockSpec {
    fn new(prefix: String, in_channels: usize, out_channels: usize) -> Self {
        Self { prefix, in_channels, out_channels }
    }

    pub fn has_projection(&self) -> bool {
        self.in_channels != self.out_channels
    }

    fn convs(&self) -> Vec<(String, ConvSpec)> {
        let mut v = vec![
            (format!("{}.conv1", self.prefix), ConvSpec::same3x3(self.in_channels, self.out_channels)),
            (format!("{}.conv2", self.prefix), ConvSpec::same3x3(self.out_channels, self.out_channels)),
        ];
        if self.has_projection() {
            v.push((format!("{}.proj", self.prefix), ConvSpec::pointwise(self.in_channels, self.out_channels)));
        }
        v
    }

    fn norms(&self) -> [String; 2] {
        [format!("{}.bn1", self.prefix), format!("{}.bn2", self.prefix)]
    }
}

/// Resolved layer plan for a config.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub stem: ConvSpec,
    pub encoder: Vec<Vec<BlockSpec>>,
    pub down: Vec<ConvSpec>,
    pub middle: Vec<BlockSpec>,
    pub up: Vec<ConvSpec>,
    pub decoder: Vec<Vec<BlockSpec>>,
    pub head: ConvSpec,
}

fn chain(prefix: &str, cin: usize, cout: usize, count: usize) -> Vec<BlockSpec> {
    (0..count)
        .map(|b| BlockSpec::new(format!("{prefix}.block{b}"), if b == 0 { cin } else { cout }, cout))
        .collect()
}

impl Architecture {
    pub fn new(config: &ModelConfig) -> Self {
        let ch = config.level_channels();
        let bpl = config.blocks_per_level;
        let mut encoder = Vec::new();
        let mut down = Vec::new();
        let mut prev = ch[0];
        for (l, &c) in ch.iter().enumerate() {
            encoder.push(chain(&format!("enc{l}"), prev, c, bpl));
            if l + 1 < LEVELS {
                down.push(ConvSpec::down(c, c));
            }
            prev = c;
        }
        let middle = chain("mid", ch[3], ch[3], bpl);
        let mut up = Vec::new();
        let mut decoder = Vec::new();
        let mut cur = ch[3];
        for s in 0..LEVELS - 1 {
            let skip = ch[LEVELS - 2 - s];
            // Each stage lands on the width of the skip it consumes: 4w→2w, 2w→2w, 2w→w.
            let target = skip;
            up.push(ConvSpec::up(cur, target));
            decoder.push(chain(&format!("dec{s}"), target + skip, target, bpl));
            cur = target;
        }
        Self {
            stem: ConvSpec::same3x3(config.in_fields, ch[0]),
            encoder,
            down,
            middle,
            up,
            decoder,
            head: ConvSpec::same3x3(ch[0], config.in_fields),
        }
    }

    fn blocks(&self) -> impl Iterator<Item = &BlockSpec> {
        self.encoder.iter().flatten().chain(&self.middle).chain(self.decoder.iter().flatten())
    }

    /// Every convolution with its parameter prefix.
    pub fn convs(&self) -> Vec<(String, ConvSpec)> {
        let mut v = vec![("stem".to_string(), self.stem)];
        for (l, s) in self.down.iter().enumerate() {
            v.push((format!("down{l}"), *s));
        }
        for (s, spec) in self.up.iter().enumerate() {
            v.push((format!("up{s}"), *spec));
        }
        v.push(("head".to_string(), self.head));
        for b in self.blocks() {
            v.extend(b.convs());
        }
        v
    }

    /// Every batchnorm layer with its channel count.
    pub fn norms(&self) -> Vec<(String, usize)> {
        self.blocks()
            .flat_map(|b| b.norms().into_iter().map(move |n| (n, b.out_channels)))
            .collect()
    }
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, spec: &ConvSpec) -> Tensor4 {
    let bound = (6.0 / spec.fan_in() as f64).sqrt();
    Tensor4::from_fn(spec.weight_dims(), |_, _, _, _| rng.gen_range(-bound..bound))
}

fn init_conv(params: &mut BTreeMap<String, Tensor4>, rng: &mut ChaCha8Rng, name: &str, spec: &ConvSpec) {
    params.insert(format!("{name}.weight"), kaiming_uniform(rng, spec));
    params.insert(format!("{name}.bias"), Tensor4::vector(vec![0.0; spec.out_channels]));
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: BTreeMap<String, Tensor4>,
    norms: BTreeMap<String, RunningStats>,
}

/// Builds a freshly initialized network: Kaiming-uniform conv weights, zero
/// biases, unit gamma, zero beta. Deterministic in `seed`.
pub fn build_model(config: ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let arch = Architecture::new(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    for (name, spec) in arch.convs() {
        init_conv(&mut params, &mut rng, &name, &spec);
    }
    let mut norms = BTreeMap::new();
    for (name, c) in arch.norms() {
        params.insert(format!("{name}.gamma"), Tensor4::vector(vec![1.0; c]));
        params.insert(format!("{name}.beta"), Tensor4::vector(vec![0.0; c]));
        norms.insert(name, RunningStats::new(c));
    }
    Ok(Model { config, params, norms })
}

/// Parameter nodes of one residual block.
#[derive(Debug, Clone, Copy)]
pub struct BlockNodes {
    pub conv1: (NodeId, NodeId),
    pub bn1: (NodeId, NodeId),
    pub conv2: (NodeId, NodeId),
    pub bn2: (NodeId, NodeId),
    pub proj: Option<(NodeId, NodeId)>,
}

/// How a block's batchnorms are evaluated.
#[derive(Debug, Clone, Copy)]
pub enum BlockNorm<'a> {
    Batch,
    Frozen(&'a RunningStats, &'a RunningStats),
}

/// `gelu(bn(conv(gelu(bn(conv(x)))))) + shortcut(x)`, shortcut being the
/// identity or a 1×1 projection when the channel count changes.
///
/// Returns the output node and, in batch mode, the moments of both norms.
pub fn residual_block(
    g: &mut Graph,
    x: NodeId,
    block: &BlockSpec,
    nodes: &BlockNodes,
    norm: BlockNorm<'_>,
) -> Result<(NodeId, Vec<BatchMoments>)> {
    let cin = g.value(x)?.dims().c;
    if cin != block.in_channels {
        return shape_err(format!(
            "{}: input has {cin} channels, block expects {}",
            block.prefix, block.in_channels
        ));
    }
    let (cin, cout) = (block.in_channels, block.out_channels);
    let mut moments = Vec::new();
    let mut bn = |g: &mut Graph, h: NodeId, (gamma, beta): (NodeId, NodeId), k: usize| -> Result<NodeId> {
        match norm {
            BlockNorm::Batch => {
                let (id, m) = g.batchnorm(h, gamma, beta)?;
                moments.push(m);
                Ok(id)
            }
            BlockNorm::Frozen(s1, s2) => g.batchnorm_frozen(h, gamma, beta, if k == 0 { s1 } else { s2 }),
        }
    };
    let h = g.conv2d(x, nodes.conv1.0, Some(nodes.conv1.1), ConvSpec::same3x3(cin, cout))?;
    let h = bn(g, h, nodes.bn1, 0)?;
    let h = g.gelu(h)?;
    let h = g.conv2d(h, nodes.conv2.0, Some(nodes.conv2.1), ConvSpec::same3x3(cout, cout))?;
    let h = bn(g, h, nodes.bn2, 1)?;
    let h = g.gelu(h)?;
    let shortcut = match (block.has_projection(), nodes.proj) {
        (false, _) => x,
        (true, Some((w, b))) => g.conv2d(x, w, Some(b), ConvSpec::pointwise(cin, cout))?,
        (true, None) => {
            return Err(Error::Shape(format!("{}: projection weights missing", block.prefix)))
        }
    };
    Ok((g.add(h, shortcut)?, moments))
}

/// Named activation dims captured during a traced forward.
pub type Trace = Vec<(String, Dims)>;

struct Recorder<'a> {
    g: &'a mut Graph,
    params: &'a BTreeMap<String, Tensor4>,
    norms: &'a BTreeMap<String, RunningStats>,
    mode: Mode,
    nodes: HashMap<String, NodeId>,
    moments: Vec<(String, BatchMoments)>,
    trace: Option<&'a mut Trace>,
}

impl Recorder<'_> {
    fn p(&mut self, name: &str) -> Result<NodeId> {
        if let Some(id) = self.nodes.get(name) {
            return Ok(*id);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
        let id = self.g.param(name, t.clone());
        self.nodes.insert(name.to_string(), id);
        Ok(id)
    }

    fn wb(&mut self, prefix: &str) -> Result<(NodeId, NodeId)> {
        Ok((self.p(&format!("{prefix}.weight"))?, self.p(&format!("{prefix}.bias"))?))
    }

    fn ab(&mut self, prefix: &str) -> Result<(NodeId, NodeId)> {
        Ok((self.p(&format!("{prefix}.gamma"))?, self.p(&format!("{prefix}.beta"))?))
    }

    fn mark(&mut self, name: &str, id: NodeId) -> Result<()> {
        if let Some(trace) = self.trace.as_deref_mut() {
            trace.push((name.to_string(), self.g.value(id)?.dims()));
        }
        Ok(())
    }

    fn conv(&mut self, x: NodeId, prefix: &str, spec: ConvSpec) -> Result<NodeId> {
        let (w, b) = self.wb(prefix)?;
        if spec.transposed {
            self.g.conv2d_transpose(x, w, Some(b), spec)
        } else {
            self.g.conv2d(x, w, Some(b), spec)
        }
    }

    fn block(&mut self, x: NodeId, block: &BlockSpec) -> Result<NodeId> {
        let pre = &block.prefix;
        let nodes = BlockNodes {
            conv1: self.wb(&format!("{pre}.conv1"))?,
            bn1: self.ab(&format!("{pre}.bn1"))?,
            conv2: self.wb(&format!("{pre}.conv2"))?,
            bn2: self.ab(&format!("{pre}.bn2"))?,
            proj: if block.has_projection() { Some(self.wb(&format!("{pre}.proj"))?) } else { None },
        };
        let [n1, n2] = block.norms();
        let norm = match self.mode {
            Mode::Train => BlockNorm::Batch,
            Mode::Eval => {
                let get = |n: &str| {
                    let s = self.norms.get(n).ok_or_else(|| Error::Config(format!("missing norm `{n}`")))?;
                    if !s.is_initialized() {
                        return Err(Error::UninitializedStats(n.to_string()));
                    }
                    Ok(s)
                };
                BlockNorm::Frozen(get(&n1)?, get(&n2)?)
            }
        };
        let (out, moments) = residual_block(self.g, x, block, &nodes, norm)?;
        for (name, m) in [n1, n2].into_iter().zip(moments) {
            self.moments.push((name, m));
        }
        Ok(out)
    }

    fn blocks(&mut self, mut x: NodeId, blocks: &[BlockSpec]) -> Result<NodeId> {
        for b in blocks {
            x = self.block(x, b)?;
        }
        Ok(x)
    }

    fn unet(&mut self, x: NodeId, arch: &Architecture) -> Result<NodeId> {
        let mut h = self.conv(x, "stem", arch.stem)?;
        let mut skips = Vec::new();
        for (l, blocks) in arch.encoder.iter().enumerate() {
            h = self.blocks(h, blocks)?;
            self.mark(&format!("enc{l}"), h)?;
            if let Some(spec) = arch.down.get(l) {
                skips.push(h);
                h = self.conv(h, &format!("down{l}"), *spec)?;
            }
        }
        h = self.blocks(h, &arch.middle)?;
        self.mark("bottleneck", h)?;
        for (s, (spec, blocks)) in arch.up.iter().zip(&arch.decoder).enumerate() {
            h = self.conv(h, &format!("up{s}"), *spec)?;
            let skip = skips.pop().expect("one skip per upsampling stage");
            h = self.g.concat(h, skip)?;
            h = self.blocks(h, blocks)?;
            self.mark(&format!("dec{s}"), h)?;
        }
        self.conv(h, "head", arch.head)
    }
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(&self.config)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor4> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor4> {
        &mut self.params
    }

    pub fn norms(&self) -> &BTreeMap<String, RunningStats> {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut BTreeMap<String, RunningStats> {
        &mut self.norms
    }

    /// Reassembles a model from stored tensors, checking that names and dims
    /// match what `config` implies.
    pub fn from_parts(
        config: ModelConfig,
        params: BTreeMap<String, Tensor4>,
        norms: BTreeMap<String, RunningStats>,
    ) -> Result<Model> {
        let template = build_model(config, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for (name, t) in &template.params {
            let got = params.get(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            if got.dims() != t.dims() {
                return shape_err(format!("parameter `{name}`: {} vs expected {}", got.dims(), t.dims()));
            }
        }
        for (name, s) in &template.norms {
            let got = norms.get(name).ok_or_else(|| Error::Config(format!("missing norm `{name}`")))?;
            if got.channels() != s.channels() {
                return shape_err(format!("norm `{name}` channel mismatch"));
            }
        }
        Ok(Model { config, params, norms })
    }

    fn check_input(&self, d: Dims) -> Result<()> {
        let c = &self.config;
        if (d.c, d.h, d.w) != (c.in_fields, c.height, c.width) {
            return shape_err(format!(
                "model expects (N, {}, {}, {}), got {d}",
                c.in_fields, c.height, c.width
            ));
        }
        Ok(())
    }

    /// Records the network on `g`. Train mode returns the batch moments of
    /// every norm, to be folded in with [`Model::apply_moments`].
    pub fn record(
        &self,
        g: &mut Graph,
        x: NodeId,
        mode: Mode,
        trace: Option<&mut Trace>,
    ) -> Result<(NodeId, Vec<(String, BatchMoments)>)> {
        self.check_input(g.value(x)?.dims())?;
        let arch = self.architecture();
        let mut rec = Recorder {
            g,
            params: &self.params,
            norms: &self.norms,
            mode,
            nodes: HashMap::new(),
            moments: Vec::new(),
            trace,
        };
        let out = rec.unet(x, &arch)?;
        Ok((out, rec.moments))
    }

    pub fn apply_moments(&mut self, moments: &[(String, BatchMoments)]) {
        for (name, m) in moments {
            if let Some(s) = self.norms.get_mut(name) {
                s.update(&m.mean, &m.var, m.count);
            }
        }
    }

    /// One-step prediction. Train mode updates the running statistics.
    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let (out, moments) = self.record(&mut g, xi, mode, None)?;
        self.apply_moments(&moments);
        g.into_value(out)
    }

    /// Eval-mode prediction on an immutable model.
    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let (out, _) = self.record(&mut g, xi, Mode::Eval, None)?;
        g.into_value(out)
    }

    /// Forward pass that also reports the dims of each stage output.
    pub fn forward_traced(&self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, Trace)> {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let mut trace = Trace::new();
        let (out, _) = self.record(&mut g, xi, mode, Some(&mut trace))?;
        Ok((g.into_value(out)?, trace))
    }
}

/// Scalar parameter count: weights, biases, gamma and beta. Running
/// statistics are buffers, not parameters.
pub fn count_params<'a>(params: impl IntoIterator<Item = &'a Tensor4>) -> usize {
    params.into_iter().map(Tensor4::len).sum()
}

/// 1×1 convolutions mapping `d_task` fields to the core's five and back.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapters {
    pub d_task: usize,
    pub params: BTreeMap<String, Tensor4>,
}

pub const ADAPTER_IN: &str = "adapter.in";
pub const ADAPTER_OUT: &str = "adapter.out";

impl Adapters {
    pub fn new(d_task: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        init_conv(&mut params, &mut rng, ADAPTER_IN, &ConvSpec::pointwise(d_task, CORE_FIELDS));
        init_conv(&mut params, &mut rng, ADAPTER_OUT, &ConvSpec::pointwise(CORE_FIELDS, d_task));
        Self { d_task, params }
    }
}

/// Core network optionally wrapped by adapters. With `adapters == None` the
/// wrapper is transparent.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedModel {
    pub core: Model,
    pub adapters: Option<Adapters>,
}

/// Inserts adapters when `d_task` differs from the core's five fields.
pub fn wrap_with_adapters(model: Model, d_task: usize, seed: u64) -> Result<AdaptedModel> {
    if d_task < 1 {
        return Err(Error::Config("d_task must be >= 1".into()));
    }
    if model.config.in_fields != CORE_FIELDS {
        return Err(Error::Config(format!(
            "adapters expect a {CORE_FIELDS}-field core, got {}",
            model.config.in_fields
        )));
    }
    let adapters = (d_task != CORE_FIELDS).then(|| Adapters::new(d_task, seed));
    Ok(AdaptedModel { core: model, adapters })
}

impl From<Model> for AdaptedModel {
    fn from(core: Model) -> Self {
        Self { core, adapters: None }
    }
}

impl AdaptedModel {
    /// Field count seen from outside.
    pub fn fields(&self) -> usize {
        self.adapters.as_ref().map_or(self.core.config.in_fields, |a| a.d_task)
    }

    pub fn count_params(&self) -> usize {
        count_params(self.core.params.values())
            + self.adapters.as_ref().map_or(0, |a| count_params(a.params.values()))
    }

    /// Every trainable tensor, core first.
    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor4)> {
        let extra = self.adapters.as_mut().map(|a| &mut a.params).into_iter().flatten();
        self.core.params.iter_mut().chain(extra).map(|(k, v)| (k.as_str(), v))
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.core.params.keys().cloned().collect();
        if let Some(a) = &self.adapters {
            v.extend(a.params.keys().cloned());
        }
        v
    }

    pub fn record(
        &self,
        g: &mut Graph,
        x: NodeId,
        mode: Mode,
        trace: Option<&mut Trace>,
    ) -> Result<(NodeId, Vec<(String, BatchMoments)>)> {
        let Some(a) = &self.adapters else {
            return self.core.record(g, x, mode, trace);
        };
        let d = g.value(x)?.dims();
        if d.c != a.d_task {
            return shape_err(format!("adapted model expects {} fields, got {d}", a.d_task));
        }
        let node = |g: &mut Graph, name: String| -> Result<NodeId> {
            let t = a.params.get(&name).ok_or_else(|| Error::Config(format!("missing `{name}`")))?;
            Ok(g.param(name, t.clone()))
        };
        let (wi, bi) = (node(g, format!("{ADAPTER_IN}.weight"))?, node(g, format!("{ADAPTER_IN}.bias"))?);
        let h = g.conv2d(x, wi, Some(bi), ConvSpec::pointwise(a.d_task, CORE_FIELDS))?;
        let (h, moments) = self.core.record(g, h, mode, trace)?;
        let (wo, bo) = (node(g, format!("{ADAPTER_OUT}.weight"))?, node(g, format!("{ADAPTER_OUT}.bias"))?);
        let out = g.conv2d(h, wo, Some(bo), ConvSpec::pointwise(CORE_FIELDS, a.d_task))?;
        Ok((out, moments))
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let (out, moments) = self.record(&mut g, xi, mode, None)?;
        self.core.apply_moments(&moments);
        g.into_value(out)
    }

    pub fn forward_eval(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let (out, _) = self.record(&mut g, xi, Mode::Eval, None)?;
        g.into_value(out)
    }
}
