//! Masked-node pretraining: hide a fraction of atom feature vectors behind
//! a learned mask embedding and train the graph layers to recover each
//! hidden atom's element class from its neighborhood.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{parameter_gradients, Adam, TrainError};
use crate::autodiff::{Tape, Tensor};
use crate::featurize::AtomFeature;
use crate::graph::GraphTensor;
use crate::layers::GnnModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub mask_rate: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { mask_rate: 0.15, lr: 1e-3, epochs: 30, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
    /// The learned mask embedding (1 x atom feature width).
    pub mask_vector: Tensor,
    /// Linear symbol-classification head (units x classes, plus bias).
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub final_accuracy: f64,
}

/// Offset and width of the element-symbol one-hot block in the model's
/// atom feature layout.
fn symbol_block(model: &GnnModel) -> Result<(usize, usize), TrainError> {
    let mut offset = 0;
    for f in &model.feature_config.atom_features {
        if *f == AtomFeature::Symbol {
            return Ok((offset, f.width()));
        }
        offset += f.width();
    }
    Err(TrainError::MissingFeature("symbol one-hot block".into()))
}

/// Element class of each node: the hot index of its symbol block.
fn symbol_classes(g: &GraphTensor, offset: usize, width: usize) -> Vec<usize> {
    (0..g.node_feature.rows())
        .map(|r| {
            let row = g.node_feature.row(r);
            row[offset..offset + width]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

/// Pick floor(n * rate) distinct node indices per subgraph. Graphs too
/// small to mask any node contribute nothing.
fn choose_masked(g: &GraphTensor, rate: f64, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let mut chosen = Vec::new();
    let mut offset = 0;
    for &size in &g.sizes {
        let count = (size as f64 * rate).floor() as usize;
        if count > 0 {
            let mut local: Vec<usize> = (0..size).collect();
            local.shuffle(rng);
            chosen.extend(local[..count].iter().map(|&i| offset + i));
        }
        offset += size;
    }
    chosen.sort();
    chosen
}

fn last_graph_width(model: &GnnModel) -> usize {
    model
        .layers
        .iter()
        .filter(|l| l.kind.is_graph())
        .next_back()
        .map(|l| l.units)
        .unwrap_or(model.feature_config.atom_width())
}

/// Forward the model's graph layers over features with `masked` rows
/// replaced by the mask embedding, then classify those rows' symbols.
/// Returns the cross-entropy loss node, the masked-row logits, and the
/// bound parameter ids for gradient lookup.
fn masked_forward(
    tape: &mut Tape,
    model: &GnnModel,
    g: &GraphTensor,
    masked: &[usize],
    classes: &[usize],
) -> Result<(crate::autodiff::NodeId, Tensor, BTreeMap<String, crate::autodiff::NodeId>), TrainError>
{
    let n = g.node_feature.rows();
    let d = g.node_feature.cols();
    // Zero the masked rows, then add indicator (n x 1) x mask vector (1 x d);
    // the mask embedding stays differentiable through the matmul.
    let mut base = g.node_feature.clone();
    let mut indicator = Tensor::zeros(vec![n, 1]);
    for &i in masked {
        for c in 0..d {
            base.set(i, c, 0.0);
        }
        indicator.set(i, 0, 1.0);
    }
    let base = tape.input(base, true);
    let ind = tape.constant(indicator);
    let mask_id = tape.input(model.params.get("pretrain.mask").unwrap().clone(), true);
    let filled = tape.matmul(ind, mask_id);
    let x = tape.add(base, filled);

    let mut overrides = BTreeMap::new();
    overrides.insert("pretrain.mask".to_string(), mask_id);
    let pass = model.forward_bound(tape, g, true, &overrides, Some(x))?;
    let last = *pass.node_states.last().expect("at least one graph layer");

    let head_w = pass.params["pretrain.head_w"];
    let head_b = pass.params["pretrain.head_b"];
    let logits = tape.matmul(last, head_w);
    let logits = tape.add_rows(logits, head_b);
    let picked = tape.gather_rows(logits, Rc::new(masked.to_vec()));
    let masked_classes: Vec<usize> = masked.iter().map(|&i| classes[i]).collect();
    let loss = tape.cross_entropy_rows(picked, Rc::new(masked_classes));
    let picked_values = tape.value(picked).clone();
    Ok((loss, picked_values, pass.params))
}

fn accuracy(logits: &Tensor, classes: &[usize]) -> f64 {
    if classes.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for (r, &want) in classes.iter().enumerate() {
        let row = logits.row(r);
        let got = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if got == want {
            hits += 1;
        }
    }
    hits as f64 / classes.len() as f64
}

/// Pretrain the model's graph layers on unlabeled graphs. The mask vector
/// and classification head are temporary parameters, trained jointly and
/// stripped from the model afterwards (returned in the report).
pub fn masked_graph_pretrain(
    model: &mut GnnModel,
    graphs: &[GraphTensor],
    cfg: &PretrainConfig,
) -> Result<PretrainReport, TrainError> {
    if graphs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !(cfg.mask_rate > 0.0 && cfg.mask_rate < 1.0) {
        return Err(TrainError::BadConfig("mask_rate must be in (0, 1)".into()));
    }
    let (offset, width) = symbol_block(model)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    // Temporary pretraining parameters, seeded like the model's own.
    let d = model.feature_config.atom_width();
    let units = last_graph_width(model);
    let mut init_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x70726574);
    let scale = (6.0 / (d + units) as f64).sqrt();
    let rand_mat = |rng: &mut ChaCha20Rng, r: usize, c: usize, s: f64| {
        use rand::Rng;
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-s..s)).collect()).unwrap()
    };
    model.params.set("pretrain.mask", rand_mat(&mut init_rng, 1, d, scale));
    model.params.set("pretrain.head_w", rand_mat(&mut init_rng, units, width, scale));
    model.params.set("pretrain.head_b", Tensor::zeros(vec![width]));

    let mut optimizer = Adam::new(cfg.lr);
    let mut epoch_losses = Vec::new();
    let mut last_logits = Tensor::zeros(vec![0, width]);
    let mut last_classes = Vec::new();
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<GraphTensor> = chunk.iter().map(|&i| graphs[i].clone()).collect();
            let merged = GraphTensor::merge(&batch).expect("uniform layout");
            let masked = choose_masked(&merged, cfg.mask_rate, &mut rng);
            if masked.is_empty() {
                continue;
            }
            let classes = symbol_classes(&merged, offset, width);
            let mut tape = Tape::new();
            let (loss, logits, param_ids) =
                masked_forward(&mut tape, model, &merged, &masked, &classes)?;
            let grads = tape.backward(loss).expect("scalar loss");
            let named = parameter_gradients(model, &grads, &param_ids);
            optimizer.step(&mut model.params, &named);
            total += tape.value(loss).item();
            steps += 1;
            last_logits = logits;
            last_classes = masked.iter().map(|&i| classes[i]).collect();
        }
        epoch_losses.push(if steps > 0 { total / steps as f64 } else { 0.0 });
    }

    let final_accuracy = accuracy(&last_logits, &last_classes);
    let report = PretrainReport {
        epoch_losses,
        mask_vector: model.params.remove("pretrain.mask").unwrap(),
        head_w: model.params.remove("pretrain.head_w").unwrap(),
        head_b: model.params.remove("pretrain.head_b").unwrap(),
        final_accuracy,
    };
    Ok(report)
}

/// Masked-symbol accuracy of a pretrained model on held-out graphs, with a
/// deterministic mask drawn from `seed`. Also returns the majority-class
/// rate of the evaluated positions as the trivial baseline.
pub fn masked_symbol_accuracy(
    model: &GnnModel,
    report: &PretrainReport,
    graphs: &[GraphTensor],
    mask_rate: f64,
    seed: u64,
) -> Result<(f64, f64), TrainError> {
    let (offset, width) = symbol_block(model)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut eval_model = model.clone();
    eval_model.params.set("pretrain.mask", report.mask_vector.clone());
    eval_model.params.set("pretrain.head_w", report.head_w.clone());
    eval_model.params.set("pretrain.head_b", report.head_b.clone());

    let mut hits = 0usize;
    let mut total = 0usize;
    let mut class_counts = vec![0usize; width];
    for g in graphs {
        let masked = choose_masked(g, mask_rate, &mut rng);
        if masked.is_empty() {
            continue;
        }
        let classes = symbol_classes(g, offset, width);
        let mut tape = Tape::new();
        let (_, logits, _) = masked_forward(&mut tape, &eval_model, g, &masked, &classes)?;
        let wanted: Vec<usize> = masked.iter().map(|&i| classes[i]).collect();
        for (r, &want) in wanted.iter().enumerate() {
            let row = logits.row(r);
            let got = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if got == want {
                hits += 1;
            }
            class_counts[want] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let majority = *class_counts.iter().max().unwrap() as f64 / total as f64;
    Ok((hits as f64 / total as f64, majority))
}
