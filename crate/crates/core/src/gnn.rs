//! Weighted-edge graph convolutional network for patient classification.
//!
//! Each layer computes, for every node `u`,
//!
//! ```text
//! h_u' = act( W · Σ_{j ∈ N(u)} e_uj / sqrt(|N(u)| |N(j)|) · h_j )
//! ```
//!
//! where `N(u)` includes `u` itself through a weight-1 self-loop, `e_uj` is
//! the patient-gene z-value or 1 for every other edge, `act` is ReLU on
//! hidden layers and the identity on the output layer. The `Max` aggregation
//! replaces the sum with an elementwise max over the same normalized
//! messages. Gradients are derived by hand; training is full-batch gradient
//! descent on the mean cross-entropy of the training nodes.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::checkpoint::{self, argmax, softmax_rows, In, Out};
use crate::embedder::EmbeddingModel;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, NodeKind};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregation {
    Avg,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avg" | "mean" => Ok(Aggregation::Avg),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::InvalidParameter(format!("unknown aggregation {other:?}"))),
        }
    }
}

pub const HIDDEN_GRID: &[usize] = &[16, 32];
pub const LAYERS_GRID: &[usize] = &[2, 3, 5, 6];
pub const LR_GRID: &[f64] = &[0.001, 0.01, 0.1, 0.2];
pub const DROPOUT_GRID: &[f64] = &[0.2, 0.3, 0.5];
pub const OUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcnParams {
    pub hidden: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub aggregation: Aggregation,
    pub epochs: usize,
}

impl Default for GcnParams {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 2,
            learning_rate: 0.1,
            dropout: 0.2,
            aggregation: Aggregation::Avg,
            epochs: 1000,
        }
    }
}

impl GcnParams {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::InvalidParameter("layers and hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Checks every value against the tuning grid.
    pub fn validate_grid(&self) -> Result<()> {
        self.validate()?;
        let bad = |what: &str, v: String| Err(Error::InvalidParameter(format!("{what} {v} not in the allowed grid")));
        if !HIDDEN_GRID.contains(&self.hidden) {
            return bad("hidden channels", self.hidden.to_string());
        }
        if !LAYERS_GRID.contains(&self.layers) {
            return bad("conv layers", self.layers.to_string());
        }
        if !LR_GRID.contains(&self.learning_rate) {
            return bad("learning rate", self.learning_rate.to_string());
        }
        if !DROPOUT_GRID.contains(&self.dropout) {
            return bad("dropout", self.dropout.to_string());
        }
        Ok(())
    }

    /// Cartesian product of the tuning grid.
    pub fn grid(epochs: usize) -> Vec<GcnParams> {
        let mut out = Vec::new();
        for &hidden in HIDDEN_GRID {
            for &layers in LAYERS_GRID {
                for &learning_rate in LR_GRID {
                    for &dropout in DROPOUT_GRID {
                        for aggregation in [Aggregation::Avg, Aggregation::Max] {
                            out.push(GcnParams {
                                hidden,
                                layers,
                                learning_rate,
                                dropout,
                                aggregation,
                                epochs,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Per-node feature provider.
pub trait FeatureSource {
    fn dim(&self) -> usize;
    fn feature(&self, token: &str) -> Option<Vec<f64>>;
}

impl FeatureSource for EmbeddingModel {
    fn dim(&self) -> usize {
        EmbeddingModel::dim(self)
    }

    fn feature(&self, token: &str) -> Option<Vec<f64>> {
        self.get_embedding(token).ok().map(<[f64]>::to_vec)
    }
}

/// Random node features for the feature ablation. Each token's vector
/// depends only on the seed and the token.
#[derive(Debug, Clone, Copy)]
pub struct RandomFeatures {
    pub dim: usize,
    pub seed: u64,
    pub scale: f64,
}

impl FeatureSource for RandomFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn feature(&self, token: &str) -> Option<Vec<f64>> {
        let mut rng = seed::rng(seed::derive(self.seed, token));
        Some((0..self.dim).map(|_| rng.random_range(-self.scale..self.scale)).collect())
    }
}

/// Symmetrically normalized weighted adjacency (with self-loops), CSR.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Propagator {
    /// `edges` are undirected, without self-loops and without duplicates.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adj: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        for &(u, v, w) in edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        let deg: Vec<f64> = adj.iter().map(|a| a.len() as f64).collect();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (u, row) in adj.iter_mut().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            for &(j, w) in row.iter() {
                indices.push(j);
                values.push(w / (deg[u] * deg[j]).sqrt());
            }
            indptr.push(indices.len());
        }
        Self {
            indptr,
            indices,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn row(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[u]..self.indptr[u + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    /// Dense copy, mostly for checking.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut a = Array2::zeros((n, n));
        for u in 0..n {
            for (j, v) in self.row(u) {
                a[[u, j]] = v;
            }
        }
        a
    }

    /// Sum aggregation `Â · h`. `Â` is symmetric so this is also its own
    /// transpose product.
    fn spmm(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(h.raw_dim());
        for u in 0..self.n() {
            let mut o = out.row_mut(u);
            for (j, a) in self.row(u) {
                o.scaled_add(a, &h.row(j));
            }
        }
        out
    }

    /// Max aggregation; returns the result and the winning neighbor per cell.
    fn max_agg(&self, h: &Array2<f64>) -> (Array2<f64>, Array2<u32>) {
        let (n, d) = h.dim();
        let mut out = Array2::from_elem((n, d), f64::NEG_INFINITY);
        let mut arg = Array2::zeros((n, d));
        for u in 0..n {
            for (j, a) in self.row(u) {
                for k in 0..d {
                    let m = a * h[[j, k]];
                    if m > out[[u, k]] {
                        out[[u, k]] = m;
                        arg[[u, k]] = j as u32;
                    }
                }
            }
        }
        (out, arg)
    }
}

/// GCN input: nodes, undirected weighted edges, features and patient masks.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    pub nodes: Vec<String>,
    /// `(u, v, w)` with `u < v`; self-loops are implicit.
    pub edges: Vec<(usize, usize, f64)>,
    pub features: Array2<f64>,
    /// All patient node indices, in graph order.
    pub patients: Vec<usize>,
    pub train: Vec<usize>,
    pub train_labels: Vec<u8>,
    pub test: Vec<usize>,
    propagator: Propagator,
}

impl WeightedGraph {
    pub fn new(
        nodes: Vec<String>,
        edges: Vec<(usize, usize, f64)>,
        features: Array2<f64>,
        patients: Vec<usize>,
    ) -> Result<Self> {
        let n = nodes.len();
        if features.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: features.nrows(),
            });
        }
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidInput(format!("edge ({u}, {v}) out of range")));
            }
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            let e = merged.entry(key).or_insert(w);
            *e = e.max(w);
        }
        let edges: Vec<_> = merged.into_iter().map(|((u, v), w)| (u, v, w)).collect();
        let propagator = Propagator::new(n, &edges);
        Ok(Self {
            nodes,
            edges,
            features,
            patients,
            train: Vec::new(),
            train_labels: Vec::new(),
            test: Vec::new(),
            propagator,
        })
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, token: &str) -> Option<usize> {
        self.nodes.iter().position(|t| t == token)
    }

    /// Sets the train/test masks from patient tokens.
    pub fn set_masks(&mut self, train: &[(String, u8)], test: &[String]) -> Result<()> {
        let index: HashMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        let look = |t: &str| index.get(t).copied().ok_or_else(|| Error::UnknownToken(t.to_string()));
        self.train = train.iter().map(|(t, _)| look(t)).collect::<Result<_>>()?;
        self.train_labels = train.iter().map(|&(_, l)| l).collect();
        self.test = test.iter().map(|t| look(t)).collect::<Result<_>>()?;
        Ok(())
    }

    /// Copy with every edge weight set to 1.
    pub fn unweighted(&self) -> Self {
        let edges = self.edges.iter().map(|&(u, v, _)| (u, v, 1.0)).collect::<Vec<_>>();
        let mut g = self.clone();
        g.propagator = Propagator::new(g.n_nodes(), &edges);
        g.edges = edges;
        g
    }
}

/// Builds the GCN graph from a knowledge graph: one untyped undirected edge
/// per triple between non-literal nodes, patient-gene edges weighted by
/// their z-value unless `unweighted`, all others weight 1.
pub fn build_weighted_graph(
    kg: &KnowledgeGraph,
    features: &dyn FeatureSource,
    unweighted: bool,
) -> Result<WeightedGraph> {
    let mut index = vec![usize::MAX; kg.n_nodes()];
    let mut nodes = Vec::new();
    for (i, n) in kg.nodes().iter().enumerate() {
        if n.kind != NodeKind::Literal {
            index[i] = nodes.len();
            nodes.push(n.token());
        }
    }
    let dim = features.dim();
    let mut feat = Array2::zeros((nodes.len(), dim));
    for (i, tok) in nodes.iter().enumerate() {
        let v = features.feature(tok).ok_or_else(|| Error::MissingFeature(tok.clone()))?;
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        feat.row_mut(i).assign(&ndarray::ArrayView1::from(&v[..]));
    }
    let mut edges = Vec::new();
    for &(s, _, o) in kg.triple_ids() {
        let (u, v) = (index[s as usize], index[o as usize]);
        if u == usize::MAX || v == usize::MAX {
            continue;
        }
        let w = if unweighted { 1.0 } else { kg.link_weight(s, o).unwrap_or(1.0) };
        edges.push((u, v, w));
    }
    let patients = kg
        .nodes_with_role(crate::kg::Role::Patient)
        .map(|id| index[id as usize])
        .collect();
    WeightedGraph::new(nodes, edges, feat, patients)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub params: GcnParams,
    /// `weights[l]` maps layer-`l` features (rows) to layer-`l+1` features.
    pub weights: Vec<Array2<f64>>,
    pub loss_history: Vec<f64>,
}

struct LayerCache {
    agg: Array2<f64>,
    argmax: Option<Array2<u32>>,
    pre: Array2<f64>,
    /// Dropout mask already divided by the keep probability.
    mask: Option<Array2<f64>>,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

impl GcnModel {
    pub fn new(in_channels: usize, params: GcnParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = seed::rng(seed::derive(seed, "gcn-init"));
        let mut dims = vec![in_channels];
        dims.extend(std::iter::repeat_n(params.hidden, params.layers - 1));
        dims.push(OUT_CHANNELS);
        let weights = dims.windows(2).map(|w| glorot(w[0], w[1], &mut rng)).collect();
        Ok(Self {
            params,
            weights,
            loss_history: Vec::new(),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights[0].nrows()
    }

    fn aggregate(&self, g: &WeightedGraph, h: &Array2<f64>) -> (Array2<f64>, Option<Array2<u32>>) {
        match self.params.aggregation {
            Aggregation::Avg => (g.propagator.spmm(h), None),
            Aggregation::Max => {
                let (m, a) = g.propagator.max_agg(h);
                (m, Some(a))
            }
        }
    }

    fn forward_cached(
        &self,
        g: &WeightedGraph,
        first: &(Array2<f64>, Option<Array2<u32>>),
        rng: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> (Array2<f64>, Vec<LayerCache>) {
        let mut rng = rng;
        let n_layers = self.weights.len();
        let mut caches = Vec::with_capacity(n_layers);
        let mut h: Option<Array2<f64>> = None;
        for (l, w) in self.weights.iter().enumerate() {
            let (agg, argmax) = match &h {
                None => first.clone(),
                Some(h) => self.aggregate(g, h),
            };
            let pre = agg.dot(w);
            let last = l + 1 == n_layers;
            let mut mask = None;
            let out = if last {
                pre.clone()
            } else {
                let mut act = pre.mapv(|x| x.max(0.0));
                if let Some(r) = rng.as_deref_mut() {
                    let p = self.params.dropout;
                    if p > 0.0 {
                        let keep = 1.0 - p;
                        let m = Array2::from_shape_fn(act.raw_dim(), |_| {
                            if r.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        act *= &m;
                        mask = Some(m);
                    }
                }
                act
            };
            caches.push(LayerCache {
                agg,
                argmax,
                pre,
                mask,
            });
            h = Some(out);
        }
        (h.expect("at least one layer"), caches)
    }

    fn check_input(&self, features: &Array2<f64>) -> Result<()> {
        if features.ncols() != self.in_channels() {
            return Err(Error::DimensionMismatch {
                expected: self.in_channels(),
                got: features.ncols(),
            });
        }
        Ok(())
    }

    /// Logits for every node, dropout disabled.
    pub fn forward_all(&self, g: &WeightedGraph, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(features)?;
        if features.nrows() != g.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: g.n_nodes(),
                got: features.nrows(),
            });
        }
        let first = self.aggregate(g, features);
        Ok(self.forward_cached(g, &first, None).0)
    }

    /// Mean cross-entropy over the training nodes and its gradient with
    /// respect to every weight matrix (dropout disabled).
    pub fn loss_and_gradients(&self, g: &WeightedGraph, features: &Array2<f64>) -> Result<(f64, Vec<Array2<f64>>)> {
        self.check_input(features)?;
        let first = self.aggregate(g, features);
        Ok(self.backward(g, &first, None))
    }

    fn backward(
        &self,
        g: &WeightedGraph,
        first: &(Array2<f64>, Option<Array2<u32>>),
        rng: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> (f64, Vec<Array2<f64>>) {
        let (logits, caches) = self.forward_cached(g, first, rng);
        let n_train = g.train.len().max(1) as f64;
        let rows = logits.select(Axis(0), &g.train);
        let probs = softmax_rows(&rows);
        let mut loss = 0.0;
        let mut d_out = Array2::<f64>::zeros(logits.raw_dim());
        for (k, (&node, &label)) in g.train.iter().zip(&g.train_labels).enumerate() {
            loss -= probs[[k, label as usize]].max(1e-300).ln();
            for c in 0..OUT_CHANNELS {
                let y = if c == label as usize { 1.0 } else { 0.0 };
                d_out[[node, c]] += (probs[[k, c]] - y) / n_train;
            }
        }
        loss /= n_train;

        let n_layers = self.weights.len();
        let mut grads = vec![Array2::zeros((0, 0)); n_layers];
        let mut d_h = d_out;
        for l in (0..n_layers).rev() {
            let c = &caches[l];
            // d_h is the gradient w.r.t. this layer's output
            let mut d_pre = d_h;
            if l + 1 != n_layers {
                if let Some(m) = &c.mask {
                    d_pre *= m;
                }
                ndarray::Zip::from(&mut d_pre).and(&c.pre).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            grads[l] = c.agg.t().dot(&d_pre);
            if l == 0 {
                break;
            }
            let d_agg = d_pre.dot(&self.weights[l].t());
            d_h = match &c.argmax {
                None => g.propagator.spmm(&d_agg),
                Some(arg) => {
                    let mut d = Array2::zeros(d_agg.raw_dim());
                    for u in 0..d_agg.nrows() {
                        for k in 0..d_agg.ncols() {
                            let j = arg[[u, k]] as usize;
                            let a = g.propagator.row(u).find(|&(x, _)| x == j).map(|(_, a)| a).unwrap_or(0.0);
                            d[[j, k]] += a * d_agg[[u, k]];
                        }
                    }
                    d
                }
            };
        }
        (loss, grads)
    }
}

/// Logits for every patient node of `g`, in `g.patients` order.
pub fn gcn_forward(
    model: &GcnModel,
    g: &WeightedGraph,
    features: &Array2<f64>,
    dropout_active: bool,
    seed: u64,
) -> Result<Array2<f64>> {
    model.check_input(features)?;
    let first = model.aggregate(g, features);
    let logits = if dropout_active {
        let mut rng = seed::rng(seed);
        model.forward_cached(g, &first, Some(&mut rng)).0
    } else {
        model.forward_cached(g, &first, None).0
    };
    Ok(logits.select(Axis(0), &g.patients))
}

/// Full-batch gradient descent on the training mask.
pub fn train_gcn(g: &WeightedGraph, params: &GcnParams, seed: u64) -> Result<GcnModel> {
    if g.train.is_empty() {
        return Err(Error::InvalidInput("GCN training mask is empty".into()));
    }
    let mut model = GcnModel::new(g.features.ncols(), *params, seed)?;
    let first = model.aggregate(g, &g.features);
    let mut rng = seed::rng(seed::derive(seed, "gcn-dropout"));
    let lr = params.learning_rate;
    for _ in 0..params.epochs {
        let (loss, grads) = model.backward(g, &first, Some(&mut rng));
        model.loss_history.push(loss);
        for (w, gw) in model.weights.iter_mut().zip(&grads) {
            w.scaled_add(-lr, gw);
        }
    }
    // loss after the final update, dropout off
    let (final_loss, _) = model.backward(g, &first, None);
    model.loss_history.push(final_loss);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub node: String,
    pub label: u8,
    pub scores: [f64; 2],
}

/// Predicted labels and class probabilities for the test mask.
pub fn predict_gcn(model: &GcnModel, g: &WeightedGraph) -> Result<Vec<Prediction>> {
    let logits = model.forward_all(g, &g.features)?;
    let rows = logits.select(Axis(0), &g.test);
    let probs = softmax_rows(&rows);
    Ok(g
        .test
        .iter()
        .enumerate()
        .map(|(k, &node)| {
            let scores = [probs[[k, 0]], probs[[k, 1]]];
            let raw = [rows[[k, 0]], rows[[k, 1]]];
            Prediction {
                node: g.nodes[node].clone(),
                label: argmax(&raw) as u8,
                scores,
            }
        })
        .collect())
}

const GCN_MAGIC: &[u8; 8] = b"GKGCN\0\0\0";
const GCN_VERSION: u32 = 1;

impl GcnModel {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        checkpoint::write_header(w, GCN_MAGIC, GCN_VERSION)?;
        let mut o = Out(w);
        let p = &self.params;
        o.u64(p.hidden as u64)?;
        o.u64(p.layers as u64)?;
        o.f64(p.learning_rate)?;
        o.f64(p.dropout)?;
        o.u64(matches!(p.aggregation, Aggregation::Max) as u64)?;
        o.u64(p.epochs as u64)?;
        o.u64(self.weights.len() as u64)?;
        for m in &self.weights {
            o.matrix(m)?;
        }
        o.u64(self.loss_history.len() as u64)?;
        for &l in &self.loss_history {
            o.f64(l)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut i = In(r);
        i.header(GCN_MAGIC, GCN_VERSION)?;
        let params = GcnParams {
            hidden: i.small("hidden")?,
            layers: i.small("layers")?,
            learning_rate: i.f64()?,
            dropout: i.f64()?,
            aggregation: if i.u64()? == 1 { Aggregation::Max } else { Aggregation::Avg },
            epochs: i.small("epochs")?,
        };
        let n = i.small("layer count")?;
        let weights = (0..n).map(|_| i.matrix()).collect::<Result<Vec<_>>>()?;
        let nl = i.small("loss count")?;
        let loss_history = (0..nl).map(|_| i.f64()).collect::<Result<Vec<_>>>()?;
        i.finish()?;
        Ok(Self {
            params,
            weights,
            loss_history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_node(feature: &[f64]) -> WeightedGraph {
        WeightedGraph::new(
            vec!["p".into()],
            vec![],
            Array2::from_shape_vec((1, feature.len()), feature.to_vec()).unwrap(),
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn zero_features_give_zero_logits() {
        let g = WeightedGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![(0, 1, 1.5), (1, 2, 1.0)],
            Array2::zeros((3, 4)),
            vec![0, 1, 2],
        )
        .unwrap();
        let m = GcnModel::new(4, GcnParams::default(), 1).unwrap();
        let out = gcn_forward(&m, &g, &g.features, false, 0).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_self_loop_identity_layer() {
        // |N(u)| = 1 so the normalized self weight is 1 and the hidden layer
        // output is ReLU(x). A second identity-like layer reads it back.
        let g = one_node(&[0.7, -0.3]);
        let params = GcnParams {
            layers: 2,
            hidden: 2,
            ..GcnParams::default()
        };
        let mut m = GcnModel::new(2, params, 0).unwrap();
        m.weights = vec![Array2::eye(2), Array2::eye(2)];
        let out = m.forward_all(&g, &g.features).unwrap();
        assert_eq!(out, array![[0.7, 0.0]]);
    }

    #[test]
    fn propagator_normalization() {
        // path a - b with weight 2: |N(a)| = |N(b)| = 2
        let p = Propagator::new(2, &[(0, 1, 2.0)]);
        let d = p.to_dense();
        assert!((d[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((d[[0, 1]] - 1.0).abs() < 1e-15);
        assert_eq!(d, d.t());
    }

    #[test]
    fn duplicate_edges_merge() {
        let g = WeightedGraph::new(
            vec!["a".into(), "b".into()],
            vec![(0, 1, 1.0), (1, 0, 1.7), (0, 0, 3.0)],
            Array2::zeros((2, 1)),
            vec![],
        )
        .unwrap();
        assert_eq!(g.edges, vec![(0, 1, 1.7)]);
    }

    #[test]
    fn separable_pair_trains() {
        let mut g = WeightedGraph::new(
            vec!["p0".into(), "p1".into()],
            vec![],
            array![[1.0, 0.0], [0.0, 1.0]],
            vec![0, 1],
        )
        .unwrap();
        g.set_masks(&[("p0".into(), 0), ("p1".into(), 1)], &["p0".into(), "p1".into()]).unwrap();
        let params = GcnParams {
            hidden: 16,
            layers: 2,
            learning_rate: 0.1,
            dropout: 0.2,
            ..GcnParams::default()
        };
        let m = train_gcn(&g, &params, 5).unwrap();
        assert!(m.loss_history.last().unwrap() < &m.loss_history[0]);
        let again = train_gcn(&g, &params, 5).unwrap();
        assert_eq!(m.weights, again.weights);
        let pred = predict_gcn(&m, &g).unwrap();
        assert_eq!(pred.iter().map(|p| p.label).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[2.0, -1.0]), 0);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 0.1]), 1);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = GcnModel::new(3, GcnParams::default(), 4).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(GcnModel::read_from(buf.as_slice()).unwrap(), m);
        assert!(GcnModel::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(GcnParams::default().validate_grid().is_ok());
        let bad = GcnParams { hidden: 17, ..GcnParams::default() };
        assert!(bad.validate_grid().is_err());
        assert_eq!(GcnParams::grid(1000).len(), 2 * 4 * 4 * 3 * 2);
    }
}
