//! Graph container plus GCN and GAT message-passing layers.

use rand::Rng;

use crate::error::{mismatch, NnError, Result};
use crate::init::{fan_in_uniform, uniform};
use crate::layers::{leaky_relu, leaky_relu_grad};
use crate::linalg::gemm;
use crate::param::{Module, Param};
use crate::tensor::Tensor;
use crate::ATTENTION_SLOPE;

/// Directed graph stored as incoming-neighbour lists.
///
/// `neighbors(i)` lists every `(j, w)` such that node `i` aggregates from
/// node `j` over an edge of weight `w`. Batches of graphs are represented as
/// one disjoint union; `segments()` records the node count of each part.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    neighbors: Vec<Vec<(usize, f64)>>,
    segments: Vec<usize>,
}

impl Graph {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); n],
            segments: vec![n],
        }
    }

    /// Builds a graph from directed `(src, dst, weight)` edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], self_loops: bool) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(src, dst, w) in edges {
            g.add_edge(src, dst, w)?;
        }
        if self_loops {
            g = g.with_self_loops();
        }
        Ok(g)
    }

    /// Undirected convenience: every `(a, b, w)` becomes two directed edges.
    pub fn undirected(n: usize, edges: &[(usize, usize, f64)], self_loops: bool) -> Result<Self> {
        let mut directed = Vec::with_capacity(edges.len() * 2);
        for &(a, b, w) in edges {
            directed.push((a, b, w));
            directed.push((b, a, w));
        }
        Self::from_edges(n, &directed, self_loops)
    }

    /// Complete graph over `n = weights.len()` nodes: `n (n - 1)` directed
    /// edges with `weights[i][j]`, plus zero-weight self-loops on request.
    pub fn fully_connected(weights: &[Vec<f64>], self_loops: bool) -> Result<Self> {
        let n = weights.len();
        let mut g = Self::empty(n);
        for (i, row) in weights.iter().enumerate() {
            if row.len() != n {
                return Err(mismatch("Graph::fully_connected", &[n, n], &[n, row.len()]));
            }
            for (j, &w) in row.iter().enumerate() {
                if i != j {
                    // node i aggregates from j
                    g.add_edge(j, i, w)?;
                }
            }
        }
        if self_loops {
            g = g.with_self_loops();
        }
        Ok(g)
    }

    fn add_edge(&mut self, src: usize, dst: usize, w: f64) -> Result<()> {
        let n = self.n();
        if src >= n || dst >= n {
            return Err(NnError::InvalidGraph(format!("edge ({src}, {dst}) out of range for {n} nodes")));
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(NnError::InvalidGraph(format!("edge ({src}, {dst}) has weight {w}")));
        }
        self.neighbors[dst].push((src, w));
        Ok(())
    }

    /// Adds a zero-weight self-loop to every node that lacks one.
    pub fn with_self_loops(mut self) -> Self {
        for (i, nb) in self.neighbors.iter_mut().enumerate() {
            if !nb.iter().any(|&(j, _)| j == i) {
                nb.push((i, 0.0));
            }
        }
        self
    }

    /// Disjoint union; node ids of later graphs are offset.
    pub fn disjoint_union(graphs: &[&Graph]) -> Self {
        let mut neighbors = Vec::new();
        let mut segments = Vec::new();
        let mut off = 0;
        for g in graphs {
            for nb in &g.neighbors {
                neighbors.push(nb.iter().map(|&(j, w)| (j + off, w)).collect());
            }
            segments.extend_from_slice(&g.segments);
            off += g.n();
        }
        Self { neighbors, segments }
    }

    /// Relabels nodes: old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut neighbors = vec![Vec::new(); n];
        for (i, nb) in self.neighbors.iter().enumerate() {
            neighbors[perm[i]] = nb.iter().map(|&(j, w)| (perm[j], w)).collect();
        }
        Self {
            neighbors,
            segments: self.segments.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn has_self_loop(&self, i: usize) -> bool {
        self.neighbors[i].iter().any(|&(j, _)| j == i)
    }
}

// ---------------------------------------------------------------------------
// GCN

/// Output non-linearity of a graph layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GraphActivation {
    Identity,
    LeakyRelu(f64),
}

impl GraphActivation {
    fn apply(self, v: f64) -> f64 {
        match self {
            GraphActivation::Identity => v,
            GraphActivation::LeakyRelu(s) => leaky_relu(v, s),
        }
    }
    fn grad(self, v: f64) -> f64 {
        match self {
            GraphActivation::Identity => 1.0,
            GraphActivation::LeakyRelu(s) => leaky_relu_grad(v, s),
        }
    }
}

/// Symmetric-normalised graph convolution `act(D^-1/2 (A + I) D^-1/2 H W)`.
///
/// Edge weights are ignored; the adjacency is binary. The graph must already
/// contain self-loops.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub weight: Param,
    pub activation: GraphActivation,
    cache: Option<GcnCache>,
}

#[derive(Clone, Debug)]
struct GcnCache {
    propagated: Vec<f64>,
    pre: Vec<f64>,
    n: usize,
}

impl GcnLayer {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: GraphActivation,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Param::trainable(
                format!("{name}.weight"),
                fan_in_uniform(rng, &[inputs, outputs], inputs),
            ),
            activation,
            cache: None,
        }
    }

    fn norm_coeffs(graph: &Graph) -> Result<Vec<f64>> {
        for i in 0..graph.n() {
            if !graph.has_self_loop(i) {
                return Err(NnError::InvalidGraph(format!(
                    "gcn requires self-loops; node {i} has none"
                )));
            }
        }
        Ok((0..graph.n())
            .map(|i| 1.0 / (graph.neighbors(i).len() as f64).sqrt())
            .collect())
    }

    /// `D^-1/2 A D^-1/2 X` for a row-major `n x f` matrix.
    fn propagate(graph: &Graph, dinv: &[f64], x: &[f64], f: usize) -> Vec<f64> {
        let mut out = vec![0.0; graph.n() * f];
        for i in 0..graph.n() {
            let row = &mut out[i * f..(i + 1) * f];
            for &(j, _) in graph.neighbors(i) {
                let c = dinv[i] * dinv[j];
                for (o, v) in row.iter_mut().zip(&x[j * f..(j + 1) * f]) {
                    *o += c * v;
                }
            }
        }
        out
    }

    /// Transpose of [`Self::propagate`].
    fn propagate_t(graph: &Graph, dinv: &[f64], g: &[f64], f: usize) -> Vec<f64> {
        let mut out = vec![0.0; graph.n() * f];
        for i in 0..graph.n() {
            for &(j, _) in graph.neighbors(i) {
                let c = dinv[i] * dinv[j];
                for k in 0..f {
                    out[j * f + k] += c * g[i * f + k];
                }
            }
        }
        out
    }

    pub fn forward(&mut self, graph: &Graph, h: &Tensor) -> Result<Tensor> {
        let (n, f) = h.matrix_dims("gcn")?;
        let (fi, fo) = (self.weight.value.dim(0), self.weight.value.dim(1));
        if n != graph.n() || f != fi {
            return Err(mismatch("gcn", &[graph.n(), fi], h.shape()));
        }
        let dinv = Self::norm_coeffs(graph)?;
        let propagated = Self::propagate(graph, &dinv, h.data(), f);
        let mut pre = vec![0.0; n * fo];
        gemm(n, fi, fo, &propagated, false, self.weight.value.data(), false, &mut pre, 0.0);
        let act = self.activation;
        let out = pre.iter().map(|&v| act.apply(v)).collect();
        self.cache = Some(GcnCache { propagated, pre, n });
        Tensor::new(&[n, fo], out)
    }

    pub fn backward(&mut self, graph: &Graph, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache { op: "gcn" })?;
        let (fi, fo) = (self.weight.value.dim(0), self.weight.value.dim(1));
        let n = cache.n;
        if grad.shape() != [n, fo] || graph.n() != n {
            return Err(mismatch("gcn backward", &[n, fo], grad.shape()));
        }
        let act = self.activation;
        let dpre: Vec<f64> = grad
            .data()
            .iter()
            .zip(&cache.pre)
            .map(|(&g, &z)| g * act.grad(z))
            .collect();
        gemm(fi, n, fo, &cache.propagated, true, &dpre, false, self.weight.value.grad_mut().expect("trainable"), 1.0);
        let mut dprop = vec![0.0; n * fi];
        gemm(n, fo, fi, &dpre, false, self.weight.value.data(), true, &mut dprop, 0.0);
        let dinv = Self::norm_coeffs(graph)?;
        Tensor::new(&[n, fi], Self::propagate_t(graph, &dinv, &dprop, fi))
    }
}

impl Module for GcnLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
    }
}

// ---------------------------------------------------------------------------
// GAT

/// Multi-head graph attention.
///
/// Per head `k`, with `z = W_k h`:
/// `e_ij = LeakyReLU_0.2(a_k . [z_i || z_j || w_ij])`, `alpha_ij = softmax_j(e_ij)`
/// over the neighbours of `i`, and `out_i = sum_j alpha_ij z_j`. Heads are
/// concatenated. The trailing attention coefficient multiplies the edge
/// weight, which callers normalise (the task allocator passes `w / w_max`).
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub weight: Param,
    pub attention: Param,
    heads: usize,
    head_width: usize,
    cache: Option<GatCache>,
}

#[derive(Clone, Debug)]
struct GatCache {
    input: Tensor,
    z: Vec<f64>,
    // [head][edge] in neighbour-list order
    pre: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
}

impl GatLayer {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        inputs: usize,
        head_width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let width = heads * head_width;
        Self {
            weight: Param::trainable(
                format!("{name}.weight"),
                fan_in_uniform(rng, &[inputs, width], inputs),
            ),
            attention: Param::trainable(
                format!("{name}.attention"),
                uniform(rng, &[heads, 2 * head_width + 1], (1.0 / head_width as f64).sqrt()),
            ),
            heads,
            head_width,
            cache: None,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_width(&self) -> usize {
        self.head_width
    }

    pub fn out_width(&self) -> usize {
        self.heads * self.head_width
    }

    /// Attention coefficients of the last forward pass, `[head][node][k]`
    /// aligned with `graph.neighbors(node)`.
    pub fn last_attention(&self, graph: &Graph) -> Option<Vec<Vec<Vec<f64>>>> {
        let cache = self.cache.as_ref()?;
        Some(
            cache
                .alpha
                .iter()
                .map(|alpha| {
                    let mut off = 0;
                    (0..graph.n())
                        .map(|i| {
                            let d = graph.neighbors(i).len();
                            let row = alpha[off..off + d].to_vec();
                            off += d;
                            row
                        })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn forward(&mut self, graph: &Graph, h: &Tensor) -> Result<Tensor> {
        let (n, f) = h.matrix_dims("gat")?;
        let fi = self.weight.value.dim(0);
        if n != graph.n() || f != fi {
            return Err(mismatch("gat", &[graph.n(), fi], h.shape()));
        }
        for i in 0..n {
            if graph.neighbors(i).is_empty() {
                return Err(NnError::InvalidGraph(format!(
                    "gat: node {i} has no neighbours (add a self-loop)"
                )));
            }
        }
        let (heads, hw) = (self.heads, self.head_width);
        let width = heads * hw;
        let mut z = vec![0.0; n * width];
        gemm(n, fi, width, h.data(), false, self.weight.value.data(), false, &mut z, 0.0);

        let att = self.attention.value.data();
        let mut out = vec![0.0; n * width];
        let mut pre_all = Vec::with_capacity(heads);
        let mut alpha_all = Vec::with_capacity(heads);
        for k in 0..heads {
            let a = &att[k * (2 * hw + 1)..(k + 1) * (2 * hw + 1)];
            let (a_dst, a_src, a_w) = (&a[..hw], &a[hw..2 * hw], a[2 * hw]);
            let zk = |i: usize| &z[i * width + k * hw..i * width + (k + 1) * hw];
            let s: Vec<f64> = (0..n).map(|i| dot(a_dst, zk(i))).collect();
            let t: Vec<f64> = (0..n).map(|j| dot(a_src, zk(j))).collect();
            let mut pre = Vec::with_capacity(graph.num_edges());
            let mut alpha = Vec::with_capacity(graph.num_edges());
            for i in 0..n {
                let nb = graph.neighbors(i);
                let start = pre.len();
                for &(j, w) in nb {
                    pre.push(s[i] + t[j] + a_w * w);
                }
                let e: Vec<f64> = pre[start..].iter().map(|&p| leaky_relu(p, ATTENTION_SLOPE)).collect();
                let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = e.iter().map(|&v| (v - m).exp()).collect();
                let zsum: f64 = ex.iter().sum();
                let row = &mut out[i * width + k * hw..i * width + (k + 1) * hw];
                for (&(j, _), ev) in nb.iter().zip(ex) {
                    let al = ev / zsum;
                    alpha.push(al);
                    for (o, v) in row.iter_mut().zip(zk(j)) {
                        *o += al * v;
                    }
                }
            }
            pre_all.push(pre);
            alpha_all.push(alpha);
        }
        self.cache = Some(GatCache {
            input: h.clone(),
            z,
            pre: pre_all,
            alpha: alpha_all,
        });
        Tensor::new(&[n, width], out)
    }

    pub fn backward(&mut self, graph: &Graph, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache { op: "gat" })?;
        let n = cache.input.dim(0);
        let fi = self.weight.value.dim(0);
        let (heads, hw) = (self.heads, self.head_width);
        let width = heads * hw;
        if grad.shape() != [n, width] || graph.n() != n {
            return Err(mismatch("gat backward", &[n, width], grad.shape()));
        }
        let z = &cache.z;
        let g = grad.data();
        let att = self.attention.value.data().to_vec();
        let mut dz = vec![0.0; n * width];
        let mut datt = vec![0.0; att.len()];
        for k in 0..heads {
            let a = &att[k * (2 * hw + 1)..(k + 1) * (2 * hw + 1)];
            let (a_dst, a_src) = (&a[..hw], &a[hw..2 * hw]);
            let pre = &cache.pre[k];
            let alpha = &cache.alpha[k];
            let mut ds = vec![0.0; n];
            let mut dt = vec![0.0; n];
            let mut daw = 0.0;
            let mut e_idx = 0;
            for i in 0..n {
                let nb = graph.neighbors(i);
                let gi = &g[i * width + k * hw..i * width + (k + 1) * hw];
                let dalpha: Vec<f64> = nb
                    .iter()
                    .map(|&(j, _)| dot(gi, &z[j * width + k * hw..j * width + (k + 1) * hw]))
                    .collect();
                let weighted: f64 = dalpha
                    .iter()
                    .zip(&alpha[e_idx..e_idx + nb.len()])
                    .map(|(d, a)| d * a)
                    .sum();
                for (q, &(j, w)) in nb.iter().enumerate() {
                    let al = alpha[e_idx + q];
                    for (d, gv) in dz[j * width + k * hw..j * width + (k + 1) * hw].iter_mut().zip(gi) {
                        *d += al * gv;
                    }
                    let de = al * (dalpha[q] - weighted);
                    let dp = de * leaky_relu_grad(pre[e_idx + q], ATTENTION_SLOPE);
                    ds[i] += dp;
                    dt[j] += dp;
                    daw += dp * w;
                }
                e_idx += nb.len();
            }
            let base = k * (2 * hw + 1);
            for i in 0..n {
                let zi = &z[i * width + k * hw..i * width + (k + 1) * hw];
                for c in 0..hw {
                    datt[base + c] += ds[i] * zi[c];
                    datt[base + hw + c] += dt[i] * zi[c];
                }
                let dzi = &mut dz[i * width + k * hw..i * width + (k + 1) * hw];
                for c in 0..hw {
                    dzi[c] += ds[i] * a_dst[c] + dt[i] * a_src[c];
                }
            }
            datt[base + 2 * hw] += daw;
        }
        for (acc, v) in self.attention.value.grad_mut().expect("trainable").iter_mut().zip(datt) {
            *acc += v;
        }
        gemm(fi, n, width, cache.input.data(), true, &dz, false, self.weight.value.grad_mut().expect("trainable"), 1.0);
        let mut dh = vec![0.0; n * fi];
        gemm(n, width, fi, &dz, false, self.weight.value.data(), true, &mut dh, 0.0);
        Tensor::new(&[n, fi], dh)
    }
}

impl Module for GatLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.attention);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.attention);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fully_connected_has_n_times_n_minus_one_edges() {
        let w = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 3.0], vec![2.0, 3.0, 0.0]];
        assert_eq!(Graph::fully_connected(&w, false).unwrap().num_edges(), 6);
        assert_eq!(Graph::fully_connected(&w, true).unwrap().num_edges(), 9);
    }

    #[test]
    fn negative_weights_are_rejected() {
        assert!(Graph::from_edges(2, &[(0, 1, -1.0)], false).is_err());
    }

    #[test]
    fn gat_rejects_isolated_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gat = GatLayer::new("g", 2, 2, 1, &mut rng);
        let g = Graph::from_edges(2, &[(0, 1, 1.0)], false).unwrap();
        assert!(gat.forward(&g, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn single_neighbour_gets_all_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut gat = GatLayer::new("g", 3, 2, 2, &mut rng);
        let g = Graph::from_edges(2, &[(0, 1, 0.5), (1, 0, 0.5)], false).unwrap();
        let h = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0);
        gat.forward(&g, &h).unwrap();
        for head in gat.last_attention(&g).unwrap() {
            for row in head {
                assert_eq!(row, vec![1.0]);
            }
        }
    }

    #[test]
    fn gcn_single_node_degenerates_to_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut gcn = GcnLayer::new("g", 2, 3, GraphActivation::LeakyRelu(0.01), &mut rng);
        let g = Graph::empty(1).with_self_loops();
        let h = Tensor::new(&[1, 2], vec![0.7, -1.3]).unwrap();
        let y = gcn.forward(&g, &h).unwrap();
        let w = gcn.weight.value.data();
        for c in 0..3 {
            let z = 0.7 * w[c] - 1.3 * w[3 + c];
            assert!((y.data()[c] - leaky_relu(z, 0.01)).abs() < 1e-15);
        }
    }

    #[test]
    fn gcn_requires_self_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut gcn = GcnLayer::new("g", 2, 2, GraphActivation::Identity, &mut rng);
        assert!(gcn.forward(&Graph::empty(2), &Tensor::zeros(&[2, 2])).is_err());
    }
}
