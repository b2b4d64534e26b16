//! Losses, metrics, the Adam optimizer with plateau decay and early
//! stopping, and masked-node pretraining.

mod metrics;
mod pretrain;

pub use metrics::{metric, MetricKind, MetricResult};
pub use pretrain::{masked_graph_pretrain, masked_symbol_accuracy, PretrainConfig, PretrainReport};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Gradients, NodeId, Tape, Tensor};
use crate::graph::GraphTensor;
use crate::layers::{GnnModel, LayerError, ParamStore};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("mask selects no label entries")]
    EmptyMask,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("every task column has a single class")]
    SingleClassTask,
    #[error("model lacks the feature needed for pretraining: {0}")]
    MissingFeature(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Mae,
    MseRmse,
    Huber { delta: f64 },
}

/// Build the masked-mean loss on the tape. `targets` and `mask` are
/// constants shaped like the prediction matrix; mask entries are 0 or 1.
pub fn loss_node(
    tape: &mut Tape,
    kind: LossKind,
    preds: NodeId,
    targets: &Tensor,
    mask: &Tensor,
) -> Result<NodeId, TrainError> {
    let count: f64 = mask.data().iter().sum();
    if count == 0.0 {
        return Err(TrainError::EmptyMask);
    }
    let t = tape.constant(targets.clone());
    let per = match kind {
        LossKind::Bce => {
            // Numerically stable BCE on logits: softplus(x) - x*y.
            let sp = tape.softplus(preds);
            let xy = tape.mul(preds, t);
            tape.sub(sp, xy)
        }
        LossKind::Mae => {
            let diff = tape.sub(preds, t);
            tape.abs(diff)
        }
        LossKind::MseRmse => {
            let diff = tape.sub(preds, t);
            tape.mul(diff, diff)
        }
        LossKind::Huber { delta } => {
            let diff = tape.sub(preds, t);
            tape.huber(diff, delta)
        }
    };
    let m = tape.constant(mask.clone());
    let masked = tape.mul(per, m);
    let total = tape.sum_all(masked);
    Ok(tape.scalar_mul(total, 1.0 / count))
}

/// Adam with bias correction; moments are kept per parameter name.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to `params` given gradients keyed by the same names.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, grad) in grads {
            let Some(param) = params.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
            let mut updated = param.clone();
            for i in 0..updated.numel() {
                let g = grad.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / c1;
                let vhat = vi / c2;
                updated.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            params.set(name, updated);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    pub loss: LossKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_start: 1e-4,
            lr_end: 1e-6,
            plateau_patience: 10,
            plateau_factor: 0.1,
            early_stop_patience: 20,
            loss: LossKind::MseRmse,
            batch_size: 32,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr_end > self.lr_start {
            return Err(TrainError::BadConfig("lr_end must be <= lr_start".into()));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(TrainError::BadConfig("patiences must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// What the scheduler decided after seeing one epoch's validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerAction {
    /// New best loss; callers should snapshot weights.
    Improved,
    Continue,
    /// Learning rate was just multiplied by the plateau factor.
    Decayed,
    Stop,
}

/// Plateau decay and early stopping over a stream of validation losses.
/// Improvement means a decrease of at least 1e-6 below the best loss seen.
pub struct Scheduler {
    pub lr: f64,
    lr_end: f64,
    factor: f64,
    plateau_patience: usize,
    stop_patience: usize,
    best: Option<f64>,
    pub best_epoch: usize,
    since_improve: usize,
    since_best: usize,
}

const IMPROVEMENT_EPS: f64 = 1e-6;

impl Scheduler {
    pub fn new(cfg: &TrainConfig) -> Scheduler {
        Scheduler {
            lr: cfg.lr_start,
            lr_end: cfg.lr_end,
            factor: cfg.plateau_factor,
            plateau_patience: cfg.plateau_patience,
            stop_patience: cfg.early_stop_patience,
            best: None,
            best_epoch: 0,
            since_improve: 0,
            since_best: 0,
        }
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best
    }

    /// Feed the validation loss of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> SchedulerAction {
        let improved = match self.best {
            None => true,
            Some(b) => val_loss <= b - IMPROVEMENT_EPS,
        };
        if improved {
            self.best = Some(val_loss);
            self.best_epoch = epoch;
            self.since_improve = 0;
            self.since_best = 0;
            return SchedulerAction::Improved;
        }
        self.since_improve += 1;
        self.since_best += 1;
        if self.since_best >= self.stop_patience {
            return SchedulerAction::Stop;
        }
        if self.since_improve >= self.plateau_patience {
            self.since_improve = 0;
            self.lr = (self.lr * self.factor).max(self.lr_end);
            return SchedulerAction::Decayed;
        }
        SchedulerAction::Continue
    }
}

/// A labeled graph dataset: per-graph label and mask vectors, all of the
/// same width.
#[derive(Debug, Clone, Default)]
pub struct LabeledGraphs {
    pub graphs: Vec<GraphTensor>,
    pub labels: Vec<Vec<f64>>,
    pub masks: Vec<Vec<f64>>,
}

impl LabeledGraphs {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Merge the graphs at `indices` into one disjoint batch with stacked
    /// label and mask matrices.
    pub fn batch(&self, indices: &[usize]) -> (GraphTensor, Tensor, Tensor) {
        let graphs: Vec<GraphTensor> = indices.iter().map(|&i| self.graphs[i].clone()).collect();
        let merged = GraphTensor::merge(&graphs).expect("uniform dataset layout");
        let labels = Tensor::from_rows(
            &indices.iter().map(|&i| self.labels[i].clone()).collect::<Vec<_>>(),
        );
        let masks = Tensor::from_rows(
            &indices.iter().map(|&i| self.masks[i].clone()).collect::<Vec<_>>(),
        );
        (merged, labels, masks)
    }

    pub fn full_batch(&self) -> (GraphTensor, Tensor, Tensor) {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// Export as CSV with columns epoch, train_loss, val_loss, lr.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path).map_err(io_from_csv)?;
        w.write_record(["epoch", "train_loss", "val_loss", "lr"]).map_err(io_from_csv)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.lr.to_string(),
            ])
            .map_err(io_from_csv)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn io_from_csv(e: csv::Error) -> TrainError {
    TrainError::Io(std::io::Error::other(e))
}

/// Gradients for the model's trainable parameters, by name.
pub fn parameter_gradients(
    model: &GnnModel,
    grads: &Gradients,
    param_ids: &BTreeMap<String, NodeId>,
) -> BTreeMap<String, Tensor> {
    model
        .trainable_names()
        .into_iter()
        .map(|name| {
            let id = param_ids[&name];
            let g = grads.get_or_zeros(id, model.params.get(&name).unwrap());
            (name, g)
        })
        .collect()
}

/// Masked loss of `model` on a whole dataset, without touching parameters.
pub fn evaluate_loss(
    model: &GnnModel,
    set: &LabeledGraphs,
    kind: LossKind,
) -> Result<f64, TrainError> {
    let (g, labels, masks) = set.full_batch();
    let mut tape = Tape::new();
    let pass = model.forward_on_tape(&mut tape, &g, false)?;
    let loss = loss_node(&mut tape, kind, pass.output, &labels, &masks)?;
    Ok(tape.value(loss).item())
}

/// Train with Adam, plateau decay, early stopping, and best-weight restore.
pub fn fit(
    model: &mut GnnModel,
    train: &LabeledGraphs,
    val: &LabeledGraphs,
    cfg: &TrainConfig,
) -> Result<TrainHistory, TrainError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg.lr_start);
    let mut scheduler = Scheduler::new(cfg);
    let mut best_params: Option<ParamStore> = None;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (g, labels, masks) = train.batch(chunk);
            let mut tape = Tape::new();
            let pass = model.forward_on_tape(&mut tape, &g, true)?;
            let loss = loss_node(&mut tape, cfg.loss, pass.output, &labels, &masks)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            let grads = tape.backward(loss).expect("scalar loss");
            let named = parameter_gradients(model, &grads, &pass.params);
            optimizer.lr = scheduler.lr;
            optimizer.step(&mut model.params, &named);
            epoch_loss += loss_value;
            batches += 1;
        }
        let train_loss = epoch_loss / batches.max(1) as f64;
        let val_loss = evaluate_loss(model, val, cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        let action = scheduler.observe(epoch, val_loss);
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss, lr: scheduler.lr });
        match action {
            SchedulerAction::Improved => {
                best_params = Some(model.params.clone());
                history.best_epoch = epoch;
                history.best_val_loss = val_loss;
            }
            SchedulerAction::Stop => {
                history.stopped_early = true;
                break;
            }
            SchedulerAction::Decayed | SchedulerAction::Continue => {}
        }
    }
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(history)
}
