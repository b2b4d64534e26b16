//! Graph neural network layers, readout, dense head, and the sequential
//! model that stacks them.
//!
//! Forward passes are built on the reverse-mode tape, so a single code path
//! serves inference, training, and attribution. Layer parameters live in a
//! name-keyed store; a forward pass binds them to tape inputs and reports
//! the binding so callers can fetch per-parameter gradients.

mod checkpoint;

pub use checkpoint::{load_model, save_model};

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::featurize::FeatureConfig;
use crate::graph::{AggregationMode, GraphTensor};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("layer requires edge features but the graph has none")]
    MissingEdgeFeature,
    #[error("graph feature layout does not match the model: {0}")]
    LayoutMismatch(String),
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Gcn,
    Gin,
    Gat,
    GatE,
    MpnnE,
    Dense,
    Readout,
}

impl LayerKind {
    pub fn is_graph(self) -> bool {
        matches!(
            self,
            LayerKind::Gcn | LayerKind::Gin | LayerKind::Gat | LayerKind::GatE | LayerKind::MpnnE
        )
    }

    pub fn needs_edge_features(self) -> bool {
        matches!(self, LayerKind::GatE | LayerKind::MpnnE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, 0.2),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    Batch,
}

/// One layer of the model. `units` is the output width; `heads` only
/// matters for the attentional kinds; `readout_mode` only for readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub kind: LayerKind,
    pub units: usize,
    pub activation: Activation,
    pub heads: usize,
    pub residual: bool,
    pub normalization: Normalization,
    pub readout_mode: AggregationMode,
}

impl LayerConfig {
    pub fn graph(kind: LayerKind, units: usize) -> LayerConfig {
        LayerConfig {
            kind,
            units,
            activation: Activation::Relu,
            heads: 1,
            residual: true,
            normalization: Normalization::None,
            readout_mode: AggregationMode::Sum,
        }
    }

    pub fn dense(units: usize, activation: Activation) -> LayerConfig {
        LayerConfig {
            kind: LayerKind::Dense,
            units,
            activation,
            heads: 1,
            residual: false,
            normalization: Normalization::None,
            readout_mode: AggregationMode::Sum,
        }
    }

    pub fn readout(mode: AggregationMode) -> LayerConfig {
        LayerConfig {
            kind: LayerKind::Readout,
            units: 0,
            activation: Activation::Identity,
            heads: 1,
            residual: false,
            normalization: Normalization::None,
            readout_mode: mode,
        }
    }
}

/// Prediction task; determines the output width and which losses apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression { outputs: usize },
    BinaryClassification { labels: usize },
}

impl Task {
    pub fn outputs(self) -> usize {
        match self {
            Task::Regression { outputs } => outputs,
            Task::BinaryClassification { labels } => labels,
        }
    }
}

/// Name-keyed parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn set(&mut self, name: &str, value: Tensor) {
        self.map.insert(name.to_string(), value);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.map.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Everything a caller needs after a forward pass: the prediction node,
/// the tape ids of the bound parameters, the node-feature input, and the
/// post-activation node states of every graph layer (for attribution).
pub struct ForwardPass {
    pub output: NodeId,
    pub params: BTreeMap<String, NodeId>,
    pub node_input: NodeId,
    pub node_states: Vec<NodeId>,
}

/// A sequential GNN: graph layers, exactly one readout, then dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub layers: Vec<LayerConfig>,
    pub params: ParamStore,
    pub feature_config: FeatureConfig,
    pub task: Task,
    pub seed: u64,
}

fn glorot(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(vec![rows, cols], data).expect("glorot shape")
}

impl GnnModel {
    /// Validate the architecture and initialize parameters with seeded
    /// fan-scaled uniform draws (biases zero, attention epsilon zero).
    pub fn new(
        feature_config: FeatureConfig,
        layers: Vec<LayerConfig>,
        task: Task,
        seed: u64,
    ) -> Result<GnnModel, LayerError> {
        let readout_count = layers.iter().filter(|l| l.kind == LayerKind::Readout).count();
        if readout_count != 1 {
            return Err(LayerError::BadArchitecture(format!(
                "expected exactly one readout layer, found {readout_count}"
            )));
        }
        let readout_pos = layers.iter().position(|l| l.kind == LayerKind::Readout).unwrap();
        for (i, l) in layers.iter().enumerate() {
            if i < readout_pos && !l.kind.is_graph() {
                return Err(LayerError::BadArchitecture(format!(
                    "layer {i} ({:?}) must be a graph layer before the readout",
                    l.kind
                )));
            }
            if i > readout_pos && l.kind != LayerKind::Dense {
                return Err(LayerError::BadArchitecture(format!(
                    "layer {i} ({:?}) after the readout must be dense",
                    l.kind
                )));
            }
            if l.kind.is_graph() {
                if l.heads == 0 {
                    return Err(LayerError::BadArchitecture("heads must be >= 1".into()));
                }
                if matches!(l.kind, LayerKind::Gat | LayerKind::GatE) && l.units % l.heads != 0 {
                    return Err(LayerError::BadArchitecture(format!(
                        "units {} not divisible by heads {}",
                        l.units, l.heads
                    )));
                }
            }
        }
        match layers.last() {
            Some(l) if l.kind == LayerKind::Dense || l.kind == LayerKind::Readout => {}
            _ => {
                return Err(LayerError::BadArchitecture(
                    "model must end with the readout or a dense layer".into(),
                ))
            }
        }
        let final_width = layers
            .iter()
            .rev()
            .find(|l| l.kind != LayerKind::Readout)
            .map(|l| l.units)
            .unwrap_or(feature_config.atom_width());
        if final_width != task.outputs() {
            return Err(LayerError::BadArchitecture(format!(
                "final layer width {final_width} does not match task outputs {}",
                task.outputs()
            )));
        }

        let mut model = GnnModel {
            layers,
            params: ParamStore::new(),
            feature_config,
            task,
            seed,
        };
        model.init_params()?;
        Ok(model)
    }

    fn init_params(&mut self) -> Result<(), LayerError> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let edge_in = self.feature_config.bond_width();
        let mut width = self.feature_config.atom_width();
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("l{i}");
            let units = l.units;
            match l.kind {
                LayerKind::Readout => continue,
                LayerKind::Gcn => {
                    self.params.set(&format!("{p}.w"), glorot(&mut rng, width, units));
                    self.params.set(&format!("{p}.b"), Tensor::zeros(vec![units]));
                }
                LayerKind::Gin => {
                    self.params.set(&format!("{p}.eps"), Tensor::scalar(0.0));
                    self.params.set(&format!("{p}.w1"), glorot(&mut rng, width, units));
                    self.params.set(&format!("{p}.b1"), Tensor::zeros(vec![units]));
                    self.params.set(&format!("{p}.w2"), glorot(&mut rng, units, units));
                    self.params.set(&format!("{p}.b2"), Tensor::zeros(vec![units]));
                }
                LayerKind::Gat | LayerKind::GatE => {
                    let hd = units / l.heads;
                    for h in 0..l.heads {
                        let hp = format!("{p}.h{h}");
                        self.params.set(&format!("{hp}.w"), glorot(&mut rng, width, hd));
                        self.params.set(&format!("{hp}.a_src"), glorot(&mut rng, hd, 1));
                        self.params.set(&format!("{hp}.a_dst"), glorot(&mut rng, hd, 1));
                        if l.kind == LayerKind::GatE {
                            self.params.set(&format!("{hp}.we"), glorot(&mut rng, edge_in, hd));
                            self.params.set(&format!("{hp}.a_e"), glorot(&mut rng, hd, 1));
                        }
                    }
                    self.params.set(&format!("{p}.b"), Tensor::zeros(vec![units]));
                }
                LayerKind::MpnnE => {
                    let msg_in = 2 * width + edge_in;
                    self.params.set(&format!("{p}.mw1"), glorot(&mut rng, msg_in, units));
                    self.params.set(&format!("{p}.mb1"), Tensor::zeros(vec![units]));
                    self.params.set(&format!("{p}.mw2"), glorot(&mut rng, units, units));
                    self.params.set(&format!("{p}.mb2"), Tensor::zeros(vec![units]));
                    let upd_in = width + units;
                    self.params.set(&format!("{p}.uw1"), glorot(&mut rng, upd_in, units));
                    self.params.set(&format!("{p}.ub1"), Tensor::zeros(vec![units]));
                    self.params.set(&format!("{p}.uw2"), glorot(&mut rng, units, units));
                    self.params.set(&format!("{p}.ub2"), Tensor::zeros(vec![units]));
                }
                LayerKind::Dense => {
                    self.params.set(&format!("{p}.w"), glorot(&mut rng, width, units));
                    self.params.set(&format!("{p}.b"), Tensor::zeros(vec![units]));
                }
            }
            if l.kind.is_graph() || l.kind == LayerKind::Dense {
                if l.residual && width != units {
                    self.params.set(&format!("{p}.wres"), glorot(&mut rng, width, units));
                }
                if l.normalization == Normalization::Batch {
                    let mut gamma = Tensor::zeros(vec![units]);
                    for x in gamma.data_mut() {
                        *x = 1.0;
                    }
                    self.params.set(&format!("{p}.gamma"), gamma);
                    self.params.set(&format!("{p}.beta"), Tensor::zeros(vec![units]));
                }
                width = units;
            }
        }
        Ok(())
    }

    fn check_layout(&self, g: &GraphTensor) -> Result<(), LayerError> {
        let want = self.feature_config.atom_width();
        if g.node_feature.cols() != want {
            return Err(LayerError::LayoutMismatch(format!(
                "node feature width {} != {}",
                g.node_feature.cols(),
                want
            )));
        }
        let needs_edges = self.layers.iter().any(|l| l.kind.needs_edge_features());
        if needs_edges {
            match &g.edge_feature {
                None => return Err(LayerError::MissingEdgeFeature),
                Some(e) if e.cols() != self.feature_config.bond_width() => {
                    return Err(LayerError::LayoutMismatch(format!(
                        "edge feature width {} != {}",
                        e.cols(),
                        self.feature_config.bond_width()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Run the model on `g`, building the computation on `tape`.
    /// `training` selects batch statistics for normalization; inference
    /// uses the stored running averages.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        g: &GraphTensor,
        training: bool,
    ) -> Result<ForwardPass, LayerError> {
        self.forward_bound(tape, g, training, &BTreeMap::new(), None)
    }

    /// Like [`forward_on_tape`](Self::forward_on_tape), but parameters named
    /// in `overrides` (and optionally the node-feature input) use the given
    /// pre-registered tape nodes instead of fresh copies of the store.
    /// Finite-difference checks and custom training loops hook in here.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        g: &GraphTensor,
        training: bool,
        overrides: &BTreeMap<String, NodeId>,
        node_override: Option<NodeId>,
    ) -> Result<ForwardPass, LayerError> {
        self.check_layout(g)?;
        let mut params = BTreeMap::new();
        for (name, value) in self.params.iter() {
            let id = match overrides.get(name) {
                Some(&id) => id,
                None => tape.input(value.clone(), true),
            };
            params.insert(name.clone(), id);
        }

        let node_input =
            node_override.unwrap_or_else(|| tape.input(g.node_feature.clone(), true));
        let edge_input = g
            .edge_feature
            .as_ref()
            .map(|e| tape.input(e.clone(), false));
        let mut x = node_input;
        let mut node_states = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("l{i}");
            x = match l.kind {
                LayerKind::Readout => {
                    let seg = Rc::new(g.node_segments());
                    match l.readout_mode {
                        AggregationMode::Sum => tape.segment_sum(x, seg, g.sizes.len()),
                        AggregationMode::Mean => tape.segment_mean(x, seg, g.sizes.len()),
                        AggregationMode::Max => tape.segment_max(x, seg, g.sizes.len()),
                    }
                }
                LayerKind::Dense => {
                    let w = params[&format!("{p}.w")];
                    let b = params[&format!("{p}.b")];
                    let pre = tape.matmul(x, w);
                    let pre = tape.add_rows(pre, b);
                    self.post_process(tape, l, &p, &params, x, pre, training)
                }
                LayerKind::Gcn => {
                    let pre = gcn_aggregate(tape, g, x, &params, &p);
                    let out = self.post_process(tape, l, &p, &params, x, pre, training);
                    node_states.push(out);
                    out
                }
                LayerKind::Gin => {
                    let pre = gin_aggregate(tape, g, x, &params, &p, l.activation);
                    let out = self.post_process(tape, l, &p, &params, x, pre, training);
                    node_states.push(out);
                    out
                }
                LayerKind::Gat | LayerKind::GatE => {
                    let edges = if l.kind == LayerKind::GatE {
                        Some(edge_input.ok_or(LayerError::MissingEdgeFeature)?)
                    } else {
                        None
                    };
                    let pre = gat_aggregate(tape, g, x, edges, &params, &p, l.heads);
                    let out = self.post_process(tape, l, &p, &params, x, pre, training);
                    node_states.push(out);
                    out
                }
                LayerKind::MpnnE => {
                    let e = edge_input.ok_or(LayerError::MissingEdgeFeature)?;
                    let pre = mpnn_aggregate(tape, g, x, e, &params, &p, l.activation);
                    let out = self.post_process(tape, l, &p, &params, x, pre, training);
                    node_states.push(out);
                    out
                }
            };
        }
        Ok(ForwardPass { output: x, params, node_input, node_states })
    }

    /// Aggregation output -> normalization -> activation -> residual.
    fn post_process(
        &self,
        tape: &mut Tape,
        l: &LayerConfig,
        prefix: &str,
        params: &BTreeMap<String, NodeId>,
        input: NodeId,
        pre: NodeId,
        training: bool,
    ) -> NodeId {
        let mut h = pre;
        if l.normalization == Normalization::Batch {
            let gamma = params[&format!("{prefix}.gamma")];
            let beta = params[&format!("{prefix}.beta")];
            if training {
                h = tape.batch_norm(h, gamma, beta, 1e-5);
            } else {
                h = self.batch_norm_inference(tape, prefix, h, gamma, beta);
            }
        }
        h = l.activation.apply(tape, h);
        if l.residual {
            let skip = match params.get(&format!("{prefix}.wres")) {
                Some(&wres) => tape.matmul(input, wres),
                None => input,
            };
            h = tape.add(h, skip);
        }
        h
    }

    fn batch_norm_inference(
        &self,
        tape: &mut Tape,
        prefix: &str,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    ) -> NodeId {
        let (mean, var) = match (
            self.params.get(&format!("{prefix}.running_mean")),
            self.params.get(&format!("{prefix}.running_var")),
        ) {
            (Some(m), Some(v)) => (m.data().to_vec(), v.data().to_vec()),
            _ => {
                let d = tape.value(x).cols();
                (vec![0.0; d], vec![1.0; d])
            }
        };
        let nm = tape.constant(Tensor::vector(mean.iter().map(|v| -v).collect()));
        let centered = tape.add_rows(x, nm);
        let rows = tape.value(centered).rows();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + 1e-5).sqrt()).collect();
        let tiled = Tensor::from_rows(&vec![inv_std; rows.max(1)][..rows.max(1)]);
        let scale = tape.constant(tiled);
        let xhat = tape.mul(centered, scale);
        let gv = tape.value(gamma).data().to_vec();
        let gtile = Tensor::from_rows(&vec![gv; rows.max(1)][..rows.max(1)]);
        let gconst = tape.constant(gtile);
        let scaled = tape.mul(xhat, gconst);
        tape.add_rows(scaled, beta)
    }

    /// Update running normalization statistics from a training batch.
    /// `pre_norm` values are the aggregation outputs captured on the tape.
    pub fn update_running_stats(&mut self, layer_prefix: &str, batch: &Tensor, momentum: f64) {
        let (n, d) = (batch.rows(), batch.cols());
        if n == 0 {
            return;
        }
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                mean[c] += batch.at(r, c);
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for r in 0..n {
            for c in 0..d {
                let dlt = batch.at(r, c) - mean[c];
                var[c] += dlt * dlt;
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }
        let mkey = format!("{layer_prefix}.running_mean");
        let vkey = format!("{layer_prefix}.running_var");
        let (old_m, old_v) = match (self.params.get(&mkey), self.params.get(&vkey)) {
            (Some(m), Some(v)) => (m.data().to_vec(), v.data().to_vec()),
            _ => (mean.clone(), var.clone()),
        };
        let new_m: Vec<f64> =
            old_m.iter().zip(&mean).map(|(o, x)| momentum * o + (1.0 - momentum) * x).collect();
        let new_v: Vec<f64> =
            old_v.iter().zip(&var).map(|(o, x)| momentum * o + (1.0 - momentum) * x).collect();
        self.params.set(&mkey, Tensor::vector(new_m));
        self.params.set(&vkey, Tensor::vector(new_v));
    }

    /// Names of the trainable parameters (running statistics excluded).
    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| !n.contains("running_"))
            .collect()
    }

    /// Inference: run the graph through the model and return predictions,
    /// one row per subgraph.
    pub fn predict(&self, g: &GraphTensor) -> Result<Tensor, LayerError> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, g, false)?;
        Ok(tape.value(pass.output).clone())
    }
}

/// Self-loop augmented edge lists plus per-edge symmetric normalization
/// coefficients 1/sqrt((d_i+1)(d_j+1)).
fn gcn_edges(g: &GraphTensor) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let n = g.node_feature.rows();
    let mut deg = vec![0usize; n];
    for &d in &g.edge_dst {
        deg[d] += 1;
    }
    let mut src = g.edge_src.clone();
    let mut dst = g.edge_dst.clone();
    src.extend(0..n);
    dst.extend(0..n);
    let coef = src
        .iter()
        .zip(&dst)
        .map(|(&s, &d)| 1.0 / (((deg[s] + 1) * (deg[d] + 1)) as f64).sqrt())
        .collect();
    (src, dst, coef)
}

fn gcn_aggregate(
    tape: &mut Tape,
    g: &GraphTensor,
    x: NodeId,
    params: &BTreeMap<String, NodeId>,
    p: &str,
) -> NodeId {
    let n = g.node_feature.rows();
    let (src, dst, coef) = gcn_edges(g);
    let w = params[&format!("{p}.w")];
    let b = params[&format!("{p}.b")];
    let wh = tape.matmul(x, w);
    let msgs = tape.gather_rows(wh, Rc::new(src));
    let scaled = tape.row_scale(msgs, Rc::new(coef));
    let agg = tape.segment_sum(scaled, Rc::new(dst), n);
    tape.add_rows(agg, b)
}

fn gin_aggregate(
    tape: &mut Tape,
    g: &GraphTensor,
    x: NodeId,
    params: &BTreeMap<String, NodeId>,
    p: &str,
    act: Activation,
) -> NodeId {
    let n = g.node_feature.rows();
    let eps = params[&format!("{p}.eps")];
    let msgs = tape.gather_rows(x, Rc::new(g.edge_src.clone()));
    let neigh = tape.segment_sum(msgs, Rc::new(g.edge_dst.clone()), n);
    let scaled = tape.mul_scalar_node(x, eps);
    let selfed = tape.add(x, scaled);
    let summed = tape.add(selfed, neigh);
    let w1 = params[&format!("{p}.w1")];
    let b1 = params[&format!("{p}.b1")];
    let w2 = params[&format!("{p}.w2")];
    let b2 = params[&format!("{p}.b2")];
    let h = tape.matmul(summed, w1);
    let h = tape.add_rows(h, b1);
    let h = act.apply(tape, h);
    let h = tape.matmul(h, w2);
    tape.add_rows(h, b2)
}

/// Stable permutation putting edges in destination order, so attention
/// softmax segments are contiguous.
fn dst_sorted(src: &[usize], dst: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..dst.len()).collect();
    perm.sort_by_key(|&e| dst[e]);
    let s = perm.iter().map(|&e| src[e]).collect();
    let d = perm.iter().map(|&e| dst[e]).collect();
    (perm, s, d)
}

fn gat_aggregate(
    tape: &mut Tape,
    g: &GraphTensor,
    x: NodeId,
    edge_input: Option<NodeId>,
    params: &BTreeMap<String, NodeId>,
    p: &str,
    heads: usize,
) -> NodeId {
    let n = g.node_feature.rows();
    let mut src = g.edge_src.clone();
    let mut dst = g.edge_dst.clone();
    src.extend(0..n);
    dst.extend(0..n);
    // Self-loop edges carry zero edge features.
    let edge_node = edge_input.map(|e| {
        let ev = tape.value(e).clone();
        let d = ev.cols();
        let mut rows: Vec<Vec<f64>> = (0..ev.rows()).map(|r| ev.row(r).to_vec()).collect();
        rows.extend(std::iter::repeat(vec![0.0; d]).take(n));
        let full = Tensor::from_rows(&rows);
        tape.constant(full)
    });
    let (perm, s_sorted, d_sorted) = dst_sorted(&src, &dst);
    let perm = Rc::new(perm);
    let s_sorted = Rc::new(s_sorted);
    let d_sorted = Rc::new(d_sorted);

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let hp = format!("{p}.h{h}");
        let w = params[&format!("{hp}.w")];
        let wh = tape.matmul(x, w);
        let a_src = params[&format!("{hp}.a_src")];
        let a_dst = params[&format!("{hp}.a_dst")];
        let s_src = tape.matmul(wh, a_src);
        let s_dst = tape.matmul(wh, a_dst);
        let per_edge_src = tape.gather_rows(s_src, s_sorted.clone());
        let per_edge_dst = tape.gather_rows(s_dst, d_sorted.clone());
        let mut score = tape.add(per_edge_src, per_edge_dst);
        if let Some(e) = edge_node {
            let we = params[&format!("{hp}.we")];
            let a_e = params[&format!("{hp}.a_e")];
            let ewe = tape.matmul(e, we);
            let s_e = tape.matmul(ewe, a_e);
            let per_edge_e = tape.gather_rows(s_e, perm.clone());
            score = tape.add(score, per_edge_e);
        }
        let score = tape.leaky_relu(score, 0.2);
        let alpha = tape.segment_softmax(score, d_sorted.clone());
        let msgs = tape.gather_rows(wh, s_sorted.clone());
        let weighted = tape.mul_col_vec(msgs, alpha);
        head_outputs.push(tape.segment_sum(weighted, d_sorted.clone(), n));
    }
    let cat = if head_outputs.len() == 1 {
        head_outputs[0]
    } else {
        tape.concat(&head_outputs)
    };
    let b = params[&format!("{p}.b")];
    tape.add_rows(cat, b)
}

fn mpnn_aggregate(
    tape: &mut Tape,
    g: &GraphTensor,
    x: NodeId,
    edge_input: NodeId,
    params: &BTreeMap<String, NodeId>,
    p: &str,
    act: Activation,
) -> NodeId {
    let n = g.node_feature.rows();
    let src = Rc::new(g.edge_src.clone());
    let dst = Rc::new(g.edge_dst.clone());
    let h_dst = tape.gather_rows(x, dst.clone());
    let h_src = tape.gather_rows(x, src);
    let cat = tape.concat(&[h_dst, h_src, edge_input]);
    let mw1 = params[&format!("{p}.mw1")];
    let mb1 = params[&format!("{p}.mb1")];
    let mw2 = params[&format!("{p}.mw2")];
    let mb2 = params[&format!("{p}.mb2")];
    let m = tape.matmul(cat, mw1);
    let m = tape.add_rows(m, mb1);
    let m = act.apply(tape, m);
    let m = tape.matmul(m, mw2);
    let m = tape.add_rows(m, mb2);
    let agg = tape.segment_sum(m, dst, n);
    let upd_in = tape.concat(&[x, agg]);
    let uw1 = params[&format!("{p}.uw1")];
    let ub1 = params[&format!("{p}.ub1")];
    let uw2 = params[&format!("{p}.uw2")];
    let ub2 = params[&format!("{p}.ub2")];
    let u = tape.matmul(upd_in, uw1);
    let u = tape.add_rows(u, ub1);
    let u = act.apply(tape, u);
    let u = tape.matmul(u, uw2);
    tape.add_rows(u, ub2)
}

#[cfg(test)]
mod tests;
