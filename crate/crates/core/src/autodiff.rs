//! Reverse-mode differentiation over the tensor kernels.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value plus whatever the backward pass needs. Nodes can only reference
//! earlier nodes, so the tape order is already topological and `backward`
//! is a single reverse sweep.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    self, batchnorm_train, conv2d, conv2d_input_grad, conv2d_transpose, conv2d_weight_grad,
    ConvSpec, Dims, RunningStats, Tensor4, BN_EPS,
};

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

impl NodeId {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(String),
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec },
    ConvT { x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Tensor4, inv_std: Vec<f64> },
    FrozenNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<f64>, inv_std: Vec<f64> },
    Gelu { x: NodeId },
    Concat { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Mse { pred: NodeId, target: NodeId },
    Sum { x: NodeId },
    Dot { x: NodeId, weights: Tensor4 },
}

#[derive(Debug)]
struct Node {
    value: Tensor4,
    op: Op,
}

/// Per-channel moments observed by a train-mode batchnorm node.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn scalar(v: f64) -> Tensor4 {
    Tensor4::filled(Dims::new(1, 1, 1, 1), v)
}

impl Graph {
    pub fn new() -> Self {
        Self { id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor4, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId { graph: self.id, index: self.nodes.len() - 1 }
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.graph != self.id || id.index >= self.nodes.len() {
            return Err(Error::Graph(format!("node {} is not recorded in this graph", id.index)));
        }
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor4> {
        self.check(id)?;
        Ok(&self.nodes[id.index].value)
    }

    /// Consumes the graph, returning one node's value without copying.
    pub fn into_value(mut self, id: NodeId) -> Result<Tensor4> {
        self.check(id)?;
        Ok(self.nodes.swap_remove(id.index).value)
    }

    fn val(&self, id: NodeId) -> &Tensor4 {
        &self.nodes[id.index].value
    }

    /// Leaf that is differentiated but not named (data, test inputs).
    pub fn input(&mut self, value: Tensor4) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Named trainable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor4) -> NodeId {
        self.push(value, Op::Param(name.into()))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        for id in [Some(x), Some(w), b].into_iter().flatten() {
            self.check(id)?;
        }
        let zero = vec![0.0; spec.out_channels];
        let bias = b.map(|b| self.val(b).data()).unwrap_or(&zero);
        let out = conv2d(self.val(x), self.val(w), bias, &spec)?;
        Ok(self.push(out, Op::Conv { x, w, b, spec }))
    }

    pub fn conv2d_transpose(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        for id in [Some(x), Some(w), b].into_iter().flatten() {
            self.check(id)?;
        }
        let zero = vec![0.0; spec.out_channels];
        let bias = b.map(|b| self.val(b).data()).unwrap_or(&zero);
        let out = conv2d_transpose(self.val(x), self.val(w), bias, &spec)?;
        Ok(self.push(out, Op::ConvT { x, w, b, spec }))
    }

    /// Train-mode batchnorm. The observed moments are returned so the caller
    /// can fold them into its running statistics.
    pub fn batchnorm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<(NodeId, BatchMoments)> {
        for id in [x, gamma, beta] {
            self.check(id)?;
        }
        let bn = batchnorm_train(self.val(x), self.val(gamma).data(), self.val(beta).data())?;
        let moments = BatchMoments { mean: bn.mean, var: bn.var, count: bn.count };
        let id = self.push(
            bn.output,
            Op::BatchNorm { x, gamma, beta, xhat: bn.xhat, inv_std: bn.inv_std },
        );
        Ok((id, moments))
    }

    /// Eval-mode batchnorm: an affine map with frozen statistics.
    pub fn batchnorm_frozen(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &RunningStats,
    ) -> Result<NodeId> {
        for id in [x, gamma, beta] {
            self.check(id)?;
        }
        let out = tensor::batchnorm_eval(self.val(x), self.val(gamma).data(), self.val(beta).data(), stats)?;
        let inv_std = stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        Ok(self.push(out, Op::FrozenNorm { x, gamma, beta, mean: stats.mean.clone(), inv_std }))
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let out = tensor::gelu(self.val(x));
        Ok(self.push(out, Op::Gelu { x }))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let out = tensor::concat_channels(self.val(a), self.val(b))?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let out = tensor::add(self.val(a), self.val(b))?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Mean of squared differences; a scalar node.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.check(pred)?;
        self.check(target)?;
        let out = mse_value(self.val(pred), self.val(target))?;
        Ok(self.push(scalar(out), Op::Mse { pred, target }))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let out = self.val(x).sum();
        Ok(self.push(scalar(out), Op::Sum { x }))
    }

    /// `Σ x ⊙ weights`, a scalar projection used by gradient checks.
    pub fn dot(&mut self, x: NodeId, weights: Tensor4) -> Result<NodeId> {
        self.check(x)?;
        self.val(x).same_dims(&weights, "dot")?;
        let out = self.val(x).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(scalar(out), Op::Dot { x, weights }))
    }

    /// Reverse sweep from a scalar `loss`, accumulating over fan-out.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check(loss)?;
        if self.val(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got dims {}",
                self.val(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor4>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(scalar(1.0));

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b, spec } => {
                    let xv = self.val(*x);
                    accumulate(&mut grads, *x, conv2d_input_grad(&g, self.val(*w), spec, xv.dims())?)?;
                    accumulate(&mut grads, *w, conv2d_weight_grad(xv, &g, spec)?)?;
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, tensor::conv::bias_grad(&g))?;
                    }
                }
                Op::ConvT { x, w, b, spec } => {
                    let (gx, gw) =
                        tensor::conv::conv2d_transpose_grads(self.val(*x), self.val(*w), &g, spec);
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *w, gw)?;
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, tensor::conv::bias_grad(&g))?;
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                    let (gx, ggamma, gbeta) = batchnorm_backward(&g, xhat, inv_std, self.val(*gamma).data());
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *gamma, ggamma)?;
                    accumulate(&mut grads, *beta, gbeta)?;
                }
                Op::FrozenNorm { x, gamma, beta, mean, inv_std } => {
                    let xv = self.val(*x);
                    let gm = self.val(*gamma).data();
                    let d = g.dims();
                    let mut gx = g.clone();
                    let mut ggamma = vec![0.0; d.c];
                    let mut gbeta = vec![0.0; d.c];
                    for n in 0..d.n {
                        for c in 0..d.c {
                            let s = inv_std[c];
                            for ((gxv, &gv), &x) in
                                gx.plane_mut(n, c).iter_mut().zip(g.plane(n, c)).zip(xv.plane(n, c))
                            {
                                *gxv = gv * gm[c] * s;
                                ggamma[c] += gv * (x - mean[c]) * s;
                                gbeta[c] += gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *gamma, Tensor4::vector(ggamma))?;
                    accumulate(&mut grads, *beta, Tensor4::vector(gbeta))?;
                }
                Op::Gelu { x } => {
                    let xv = self.val(*x);
                    let data = g.data().iter().zip(xv.data()).map(|(gv, &x)| gv * tensor::gelu_grad(x)).collect();
                    accumulate(&mut grads, *x, Tensor4::new(xv.dims(), data)?)?;
                }
                Op::Concat { a, b } => {
                    let ca = self.val(*a).dims().c;
                    let cb = self.val(*b).dims().c;
                    accumulate(&mut grads, *a, tensor::slice_channels(&g, 0, ca)?)?;
                    accumulate(&mut grads, *b, tensor::slice_channels(&g, ca, cb)?)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.val(*pred), self.val(*target));
                    let k = 2.0 * g.data()[0] / p.len() as f64;
                    let data = p.data().iter().zip(t.data()).map(|(a, b)| k * (a - b)).collect::<Vec<_>>();
                    accumulate(&mut grads, *pred, Tensor4::new(p.dims(), data.clone())?)?;
                    let neg = data.into_iter().map(|v| -v).collect();
                    accumulate(&mut grads, *target, Tensor4::new(t.dims(), neg)?)?;
                }
                Op::Sum { x } => {
                    let d = self.val(*x).dims();
                    accumulate(&mut grads, *x, Tensor4::filled(d, g.data()[0]))?;
                }
                Op::Dot { x, weights } => {
                    accumulate(&mut grads, *x, weights.scaled(g.data()[0]))?;
                }
            }
        }

        let mut params = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate().take(loss.index + 1) {
            if let Op::Param(name) = &node.op {
                let g = grads[i].clone().unwrap_or_else(|| Tensor4::zeros(node.value.dims()));
                if params.insert(name.clone(), g).is_some() {
                    return Err(Error::Graph(format!("parameter `{name}` registered twice")));
                }
            }
        }
        Ok(Gradients { graph: self.id, nodes: grads, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor4>], id: NodeId, g: Tensor4) -> Result<()> {
    match &mut grads[id.index] {
        Some(acc) => acc.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn batchnorm_backward(g: &Tensor4, xhat: &Tensor4, inv_std: &[f64], gamma: &[f64]) -> (Tensor4, Tensor4, Tensor4) {
    let d = g.dims();
    let m = (d.n * d.plane()) as f64;
    let mut sum_g = vec![0.0; d.c];
    let mut sum_gx = vec![0.0; d.c];
    for n in 0..d.n {
        for c in 0..d.c {
            for (gv, xh) in g.plane(n, c).iter().zip(xhat.plane(n, c)) {
                sum_g[c] += gv;
                sum_gx[c] += gv * xh;
            }
        }
    }
    let mut gx = Tensor4::zeros(d);
    for n in 0..d.n {
        for c in 0..d.c {
            let k = gamma[c] * inv_std[c] / m;
            let (sg, sgx) = (sum_g[c], sum_gx[c]);
            let gp = g.plane(n, c);
            let xp = xhat.plane(n, c);
            for ((o, gv), xh) in gx.plane_mut(n, c).iter_mut().zip(gp).zip(xp) {
                *o = k * (m * gv - sg - xh * sgx);
            }
        }
    }
    (gx, Tensor4::vector(sum_gx), Tensor4::vector(sum_g))
}

pub(crate) fn mse_value(pred: &Tensor4, target: &Tensor4) -> Result<f64> {
    if pred.dims() != target.dims() {
        return shape_err(format!("mse: {} vs {}", pred.dims(), target.dims()));
    }
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / pred.len() as f64)
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    nodes: Vec<Option<Tensor4>>,
    params: BTreeMap<String, Tensor4>,
}

impl Gradients {
    /// Gradient of a leaf, if the loss depends on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor4> {
        if id.graph != self.graph {
            return None;
        }
        self.nodes.get(id.index).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor4> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor4> {
        self.params
    }
}

/// Relative discrepancies below this gradient magnitude are measured
/// against the floor instead, so round-off on near-zero components does not
/// dominate.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// Compares `backward` against central differences on every input scalar.
///
/// `build` records a scalar loss from the given input nodes. Returns the
/// worst `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<F>(build: F, inputs: &[Tensor4], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if step <= 0.0 {
        return Err(Error::Contract("finite-difference step must be positive".into()));
    }
    let eval = |vals: &[Tensor4]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| g.input(v.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss)?.data()[0])
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| g.input(v.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;

    let mut work: Vec<Tensor4> = inputs.to_vec();
    let mut worst = 0.0f64;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).cloned().unwrap_or_else(|| Tensor4::zeros(inputs[k].dims()));
        for j in 0..inputs[k].len() {
            let orig = inputs[k].data()[j];
            work[k].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[k].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
