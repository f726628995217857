//! GAT allocator (actor) and its critic.

use rand::Rng;
use serde::{Deserialize, Serialize};
use swarm_sar_nn::softmax::{segment_softmax, segment_softmax_backward};
use swarm_sar_nn::{BatchNorm, Dense, GatLayer, Graph, Layer, Mode, Module, Param, Sequential, Tensor, LEAKY_SLOPE};

use super::{argmax, AllocPolicy, TaskGraph};
use crate::error::{Error, Result};

pub const NODE_FEATURES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocatorConfig {
    pub hidden: usize,
    pub heads: usize,
    pub head_width: usize,
    pub post_hidden: usize,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self { hidden: 64, heads: 5, head_width: 13, post_hidden: 64 }
    }
}

impl AllocatorConfig {
    pub fn gat_width(&self) -> usize {
        self.heads * self.head_width
    }
}

/// Several task graphs as one disjoint union. Edge weights are divided by
/// each graph's largest weight before they reach the attention scores.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub graph: Graph,
    pub features: Tensor,
    pub sizes: Vec<usize>,
    /// Column count of padded per-graph outputs (the largest graph).
    pub width: usize,
}

impl GraphBatch {
    pub fn new(views: &[&TaskGraph]) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Precondition("empty graph batch".into()));
        }
        let mut parts = Vec::with_capacity(views.len());
        let mut feats = Vec::new();
        for v in views {
            let max = v.weights.iter().flatten().copied().fold(0.0, f64::max);
            let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
            let w: Vec<Vec<f64>> = v.weights.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
            parts.push(Graph::fully_connected(&w, true)?);
            feats.extend(v.node_features().into_iter().flatten());
        }
        let refs: Vec<&Graph> = parts.iter().collect();
        let sizes: Vec<usize> = views.iter().map(|v| v.n()).collect();
        let total = sizes.iter().sum();
        Ok(Self {
            graph: Graph::disjoint_union(&refs),
            features: Tensor::new(&[total, NODE_FEATURES], feats)?,
            width: sizes.iter().copied().max().unwrap_or(0),
            sizes,
        })
    }

    pub fn single(view: &TaskGraph) -> Result<Self> {
        Self::new(&[view])
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// `(graph, column)` of every node in union order.
    fn slots(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sizes.iter().enumerate().flat_map(|(b, &n)| (0..n).map(move |i| (b, i)))
    }
}

/// Shared trunk: dense lift to `hidden`, batch norm, LeakyReLU, then two
/// multi-head GAT layers each followed by LeakyReLU.
#[derive(Clone, Debug)]
pub struct AllocBody {
    lift: Sequential,
    gat1: GatLayer,
    act1: Layer,
    gat2: GatLayer,
    act2: Layer,
    graph: Option<Graph>,
}

impl AllocBody {
    fn new<R: Rng + ?Sized>(cfg: &AllocatorConfig, rng: &mut R) -> Self {
        let lift = Sequential::new(vec![
            Layer::Dense(Dense::new("lift", NODE_FEATURES, cfg.hidden, rng)),
            Layer::BatchNorm(BatchNorm::new("lift_bn", cfg.hidden)),
            Layer::leaky_relu(LEAKY_SLOPE),
        ]);
        Self {
            lift,
            gat1: GatLayer::new("gat1", cfg.hidden, cfg.head_width, cfg.heads, rng),
            act1: Layer::leaky_relu(LEAKY_SLOPE),
            gat2: GatLayer::new("gat2", cfg.gat_width(), cfg.head_width, cfg.heads, rng),
            act2: Layer::leaky_relu(LEAKY_SLOPE),
            graph: None,
        }
    }

    fn forward(&mut self, batch: &GraphBatch, mode: Mode) -> Result<Tensor> {
        let h = self.lift.forward(&batch.features, mode)?;
        let h = self.act1.forward(&self.gat1.forward(&batch.graph, &h)?, mode)?;
        let h = self.act2.forward(&self.gat2.forward(&batch.graph, &h)?, mode)?;
        self.graph = Some(batch.graph.clone());
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let graph = self.graph.as_ref().ok_or_else(|| Error::Precondition("allocator backward before forward".into()))?;
        let g = self.act2.backward(grad)?;
        let g = self.gat2.backward(graph, &g)?;
        let g = self.act1.backward(&g)?;
        let g = self.gat1.backward(graph, &g)?;
        self.lift.backward(&g)?;
        Ok(())
    }

    pub fn attention_layers(&self) -> [&GatLayer; 2] {
        [&self.gat1, &self.gat2]
    }
}

impl Module for AllocBody {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.lift.visit_params(f);
        self.gat1.visit_params(f);
        self.gat2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.lift.visit_params_mut(f);
        self.gat1.visit_params_mut(f);
        self.gat2.visit_params_mut(f);
    }
}

fn post_head<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Sequential {
    Sequential::new(vec![
        Layer::Dense(Dense::new("post1", inputs, hidden, rng)),
        Layer::leaky_relu(LEAKY_SLOPE),
        Layer::Dense(Dense::new("post2", hidden, 1, rng)),
    ])
}

/// Per-node scores followed by a softmax over each graph's nodes.
#[derive(Clone, Debug)]
pub struct Allocator {
    pub cfg: AllocatorConfig,
    pub body: AllocBody,
    pub head: Sequential,
    cache: Option<(Vec<f64>, Vec<usize>, usize)>,
}

impl Allocator {
    pub fn new<R: Rng + ?Sized>(cfg: &AllocatorConfig, rng: &mut R) -> Self {
        Self {
            body: AllocBody::new(cfg, rng),
            head: post_head(cfg.gat_width(), cfg.post_hidden, rng),
            cfg: cfg.clone(),
            cache: None,
        }
    }

    /// `[B, width]` distributions, zero-padded past each graph's size.
    pub fn forward(&mut self, batch: &GraphBatch, mode: Mode) -> Result<Tensor> {
        let h = self.body.forward(batch, mode)?;
        let logits = self.head.forward(&h, mode)?;
        let p = segment_softmax(logits.data(), &batch.sizes);
        let mut out = Tensor::zeros(&[batch.len(), batch.width]);
        for ((b, i), v) in batch.slots().zip(&p) {
            out.data_mut()[b * batch.width + i] = *v;
        }
        self.cache = Some((p, batch.sizes.clone(), batch.width));
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let (p, sizes, width) = self.cache.as_ref().ok_or_else(|| Error::Precondition("allocator backward before forward".into()))?;
        let g: Vec<f64> = sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &n)| (0..n).map(move |i| (b, i)))
            .map(|(b, i)| grad.data()[b * width + i])
            .collect();
        let dl = segment_softmax_backward(p, &g, sizes);
        let n = dl.len();
        let gh = self.head.backward(&Tensor::new(&[n, 1], dl)?)?;
        self.body.backward(&gh)
    }

    /// Distribution over one view's nodes, evaluation mode.
    pub fn probabilities(&mut self, view: &TaskGraph) -> Result<Vec<f64>> {
        let out = self.forward(&GraphBatch::single(view)?, Mode::Eval)?;
        Ok(out.into_data())
    }
}

impl Module for Allocator {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.body.visit_params(f);
        self.head.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.body.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}

impl AllocPolicy for Allocator {
    /// Highest-probability unmasked node, ties to the lowest id.
    fn choose(&mut self, view: &TaskGraph) -> Result<usize> {
        let p = self.probabilities(view)?;
        argmax(&p, &view.masked).ok_or_else(|| Error::Precondition("every node is masked".into()))
    }
}

/// Allocator trunk with each node's action probability appended before the
/// post-GAT dense layers; per-node values are summed into one Q per graph.
#[derive(Clone, Debug)]
pub struct AllocCritic {
    pub body: AllocBody,
    pub head: Sequential,
    cache: Option<(Vec<usize>, usize)>,
}

impl AllocCritic {
    pub fn new<R: Rng + ?Sized>(cfg: &AllocatorConfig, rng: &mut R) -> Self {
        Self {
            body: AllocBody::new(cfg, rng),
            head: post_head(cfg.gat_width() + 1, cfg.post_hidden, rng),
            cache: None,
        }
    }

    /// `[B, 1]` values of the padded `[B, width]` action distributions.
    pub fn forward(&mut self, batch: &GraphBatch, action: &Tensor, mode: Mode) -> Result<Tensor> {
        if action.shape() != [batch.len(), batch.width] {
            return Err(Error::Precondition(format!(
                "critic action has shape {:?}, expected [{}, {}]",
                action.shape(),
                batch.len(),
                batch.width
            )));
        }
        let h = self.body.forward(batch, mode)?;
        let p: Vec<f64> = batch.slots().map(|(b, i)| action.data()[b * batch.width + i]).collect();
        let n = p.len();
        let x = Tensor::concat_cols(&[&h, &Tensor::new(&[n, 1], p)?])?;
        let q = self.head.forward(&x, mode)?;
        let mut out = vec![0.0; batch.len()];
        for ((b, _), v) in batch.slots().zip(q.data()) {
            out[b] += v;
        }
        self.cache = Some((batch.sizes.clone(), batch.width));
        Ok(Tensor::new(&[batch.len(), 1], out)?)
    }

    /// Accumulates parameter gradients and returns dQ/daction.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (sizes, width) = self.cache.clone().ok_or_else(|| Error::Precondition("critic backward before forward".into()))?;
        let slots: Vec<(usize, usize)> = sizes.iter().enumerate().flat_map(|(b, &n)| (0..n).map(move |i| (b, i))).collect();
        let g: Vec<f64> = slots.iter().map(|&(b, _)| grad.data()[b]).collect();
        let gx = self.head.backward(&Tensor::new(&[g.len(), 1], g)?)?;
        let parts = gx.split_cols(&[gx.dim(1) - 1, 1])?;
        self.body.backward(&parts[0])?;
        let mut da = Tensor::zeros(&[sizes.len(), width]);
        for (&(b, i), v) in slots.iter().zip(parts[1].data()) {
            da.data_mut()[b * width + i] = *v;
        }
        Ok(da)
    }
}

impl Module for AllocCritic {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.body.visit_params(f);
        self.head.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.body.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}
