use super::*;
use crate::autodiff::grad_check;
use crate::featurize::{encode_molecule, AtomFeature, BondFeature};

/// Minimal layouts for synthetic graphs: one atom slot, one bond slot.
fn scalar_cfg() -> FeatureConfig {
    FeatureConfig {
        atom_features: vec![AtomFeature::Aromatic],
        bond_features: vec![BondFeature::Conjugated],
        include_edge_features: true,
        self_loops: false,
    }
}

fn graph(features: &[f64], edges: &[(usize, usize)], edge_dim: usize) -> GraphTensor {
    let rows: Vec<Vec<f64>> = features.iter().map(|&x| vec![x]).collect();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for &(a, b) in edges {
        pairs.push((a, b));
        pairs.push((b, a));
    }
    pairs.sort();
    GraphTensor {
        sizes: vec![features.len()],
        node_feature: Tensor::from_rows(&rows),
        edge_src: pairs.iter().map(|p| p.0).collect(),
        edge_dst: pairs.iter().map(|p| p.1).collect(),
        edge_feature: Some(if pairs.is_empty() {
            Tensor::zeros(vec![0, edge_dim])
        } else {
            Tensor::from_rows(&vec![vec![0.5; edge_dim]; pairs.len()])
        }),
        edge_weight: None,
        node_position: None,
    }
}

fn bare(kind: LayerKind, units: usize) -> LayerConfig {
    LayerConfig {
        activation: Activation::Identity,
        residual: false,
        ..LayerConfig::graph(kind, units)
    }
}

fn single_layer_model(layer: LayerConfig) -> GnnModel {
    let units = layer.units;
    GnnModel::new(
        scalar_cfg(),
        vec![layer, LayerConfig::readout(AggregationMode::Sum)],
        Task::Regression { outputs: units },
        7,
    )
    .unwrap()
}

fn identity(n: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        t.set(i, i, 1.0);
    }
    t
}

fn node_output(model: &GnnModel, g: &GraphTensor) -> Tensor {
    let mut tape = Tape::new();
    let pass = model.forward_on_tape(&mut tape, g, false).unwrap();
    tape.value(pass.node_states[0]).clone()
}

#[test]
fn gcn_two_node_hand_example() {
    let mut model = single_layer_model(bare(LayerKind::Gcn, 1));
    model.params.set("l0.w", identity(1));
    let g = graph(&[1.0, 3.0], &[(0, 1)], 1);
    let out = node_output(&model, &g);
    assert!((out.at(0, 0) - 2.0).abs() < 1e-12);
    assert!((out.at(1, 0) - 2.0).abs() < 1e-12);
}

#[test]
fn gcn_isolated_node_is_identity() {
    let mut model = single_layer_model(bare(LayerKind::Gcn, 1));
    model.params.set("l0.w", identity(1));
    let g = graph(&[5.0], &[], 1);
    let out = node_output(&model, &g);
    assert!((out.at(0, 0) - 5.0).abs() < 1e-12);
}

#[test]
fn gcn_zero_features_zero_output() {
    let model = single_layer_model(bare(LayerKind::Gcn, 1));
    let g = graph(&[0.0, 0.0, 0.0], &[(0, 1), (1, 2)], 1);
    let out = node_output(&model, &g);
    assert!(out.data().iter().all(|&x| x == 0.0));
}

#[test]
fn gin_hand_examples() {
    let mut model = single_layer_model(bare(LayerKind::Gin, 1));
    model.params.set("l0.w1", identity(1));
    model.params.set("l0.w2", identity(1));

    let g = graph(&[1.0, 3.0], &[(0, 1)], 1);
    let out = node_output(&model, &g);
    assert_eq!(out.data(), &[4.0, 4.0]);

    let g = graph(&[1.0, 3.0], &[], 1);
    let out = node_output(&model, &g);
    assert_eq!(out.data(), &[1.0, 3.0]);

    model.params.set("l0.eps", Tensor::scalar(1.0));
    let g = graph(&[2.0], &[], 1);
    let out = node_output(&model, &g);
    assert_eq!(out.data(), &[4.0]);
}

#[test]
fn gat_uniform_attention_on_identical_features() {
    // With all node features equal, every attention weight collapses to a
    // uniform distribution and each node aggregates the shared Wh row.
    let model = single_layer_model(bare(LayerKind::Gat, 2));
    let g = graph(&[1.0, 1.0, 1.0, 1.0], &[(0, 1), (1, 2), (2, 3), (3, 0)], 1);
    let out = node_output(&model, &g);
    let w = model.params.get("l0.h0.w").unwrap();
    let wh = [w.at(0, 0), w.at(0, 1)];
    for r in 0..4 {
        assert!((out.at(r, 0) - wh[0]).abs() < 1e-12);
        assert!((out.at(r, 1) - wh[1]).abs() < 1e-12);
    }
}

#[test]
fn gat_singleton_attention_is_one() {
    // An isolated node attends only to its self loop, so the output is Wh.
    let model = single_layer_model(bare(LayerKind::Gat, 2));
    let g = graph(&[3.0], &[], 1);
    let out = node_output(&model, &g);
    let w = model.params.get("l0.h0.w").unwrap();
    assert!((out.at(0, 0) - 3.0 * w.at(0, 0)).abs() < 1e-12);
    assert!((out.at(0, 1) - 3.0 * w.at(0, 1)).abs() < 1e-12);
}

#[test]
fn mpnn_reduces_to_sum_propagation() {
    // Message MLP wired to pass h_src through, update MLP wired to pass the
    // aggregate through; the layer then equals propagate(sum).
    let mut model = single_layer_model(bare(LayerKind::MpnnE, 1));
    // Message input layout: [h_dst | h_src | e]; select h_src.
    let mut mw1 = Tensor::zeros(vec![3, 1]);
    mw1.set(1, 0, 1.0);
    model.params.set("l0.mw1", mw1);
    model.params.set("l0.mw2", identity(1));
    // Update input layout: [h | aggregate]; select the aggregate.
    let mut uw1 = Tensor::zeros(vec![2, 1]);
    uw1.set(1, 0, 1.0);
    model.params.set("l0.uw1", uw1);
    model.params.set("l0.uw2", identity(1));

    let g = graph(&[1.0, 2.0, 3.0], &[(0, 1), (1, 2)], 1);
    let out = node_output(&model, &g);
    let oracle = g.propagate(crate::graph::AggregationMode::Sum);
    assert_eq!(out.data(), oracle.node_feature.data());
}

#[test]
fn mpnn_no_edges_uses_zero_aggregate() {
    let model = single_layer_model(bare(LayerKind::MpnnE, 1));
    let g = graph(&[1.5], &[], 1);
    let out = node_output(&model, &g);
    // Hand-compute sigma(MLP_upd([h | 0])) with identity activation.
    let uw1 = model.params.get("l0.uw1").unwrap();
    let uw2 = model.params.get("l0.uw2").unwrap();
    let expect = 1.5 * uw1.at(0, 0) * uw2.at(0, 0);
    assert!((out.at(0, 0) - expect).abs() < 1e-12);
}

#[test]
fn readout_modes() {
    let cfg = scalar_cfg();
    let model = GnnModel::new(
        cfg,
        vec![LayerConfig::readout(AggregationMode::Sum)],
        Task::Regression { outputs: 1 },
        0,
    )
    .unwrap();
    let mut g = graph(&[1.0, 2.0, 3.0], &[], 1);
    g.sizes = vec![1, 2];
    let out = model.predict(&g).unwrap();
    assert_eq!(out.data(), &[1.0, 5.0]);

    let mean = GnnModel::new(
        scalar_cfg(),
        vec![LayerConfig::readout(AggregationMode::Mean)],
        Task::Regression { outputs: 1 },
        0,
    )
    .unwrap();
    let g = graph(&[4.0], &[], 1);
    let out = mean.predict(&g).unwrap();
    assert_eq!(out.data(), &[4.0]);
}

fn real_model(seed: u64) -> GnnModel {
    let cfg = FeatureConfig::default();
    GnnModel::new(
        cfg,
        vec![
            LayerConfig::graph(LayerKind::Gcn, 8),
            LayerConfig::graph(LayerKind::Gcn, 8),
            LayerConfig::readout(AggregationMode::Mean),
            LayerConfig::dense(8, Activation::Relu),
            LayerConfig::dense(1, Activation::Identity),
        ],
        Task::Regression { outputs: 1 },
        seed,
    )
    .unwrap()
}

#[test]
fn batch_prediction_matches_stacked_single_predictions() {
    let cfg = FeatureConfig::default();
    let model = real_model(3);
    let smiles = ["CCO", "c1ccccc1", "CC(=O)O"];
    let graphs: Vec<GraphTensor> =
        smiles.iter().map(|s| encode_molecule(s, &cfg).unwrap()).collect();
    let merged = GraphTensor::merge(&graphs).unwrap();
    let batch = model.predict(&merged).unwrap();
    for (i, g) in graphs.iter().enumerate() {
        let single = model.predict(g).unwrap();
        assert!(
            (batch.at(i, 0) - single.at(0, 0)).abs() < 1e-8,
            "graph {i}: {} vs {}",
            batch.at(i, 0),
            single.at(0, 0)
        );
    }
}

#[test]
fn zero_weights_give_zero_regression_output() {
    let mut model = real_model(1);
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let shape = model.params.get(&name).unwrap().shape().to_vec();
        model.params.set(&name, Tensor::zeros(shape));
    }
    let cfg = FeatureConfig::default();
    let g = encode_molecule("CCO", &cfg).unwrap();
    let out = model.predict(&g).unwrap();
    assert_eq!(out.data(), &[0.0]);
}

#[test]
fn architecture_validation() {
    let cfg = scalar_cfg();
    // No readout.
    assert!(GnnModel::new(
        cfg.clone(),
        vec![bare(LayerKind::Gcn, 1)],
        Task::Regression { outputs: 1 },
        0
    )
    .is_err());
    // Graph layer after readout.
    assert!(GnnModel::new(
        cfg.clone(),
        vec![
            LayerConfig::readout(AggregationMode::Sum),
            bare(LayerKind::Gcn, 1),
        ],
        Task::Regression { outputs: 1 },
        0
    )
    .is_err());
    // Units not divisible by heads.
    let mut gat = bare(LayerKind::Gat, 3);
    gat.heads = 2;
    assert!(GnnModel::new(
        cfg.clone(),
        vec![gat, LayerConfig::readout(AggregationMode::Sum)],
        Task::Regression { outputs: 3 },
        0
    )
    .is_err());
    // Output width must match the task.
    assert!(GnnModel::new(
        cfg,
        vec![bare(LayerKind::Gcn, 2), LayerConfig::readout(AggregationMode::Sum)],
        Task::Regression { outputs: 1 },
        0
    )
    .is_err());
}

#[test]
fn layout_mismatch_detected() {
    let model = real_model(1);
    let g = encode_molecule("CC", &scalar_cfg()).unwrap();
    assert!(matches!(model.predict(&g), Err(LayerError::LayoutMismatch(_))));
}

#[test]
fn gradients_flow_through_a_full_gat_model() {
    let cfg = scalar_cfg();
    let mut gat = LayerConfig::graph(LayerKind::GatE, 4);
    gat.heads = 2;
    gat.activation = Activation::Tanh;
    let model = GnnModel::new(
        cfg,
        vec![
            gat,
            LayerConfig::readout(AggregationMode::Sum),
            LayerConfig::dense(1, Activation::Identity),
        ],
        Task::Regression { outputs: 1 },
        11,
    )
    .unwrap();
    let g = graph(&[0.3, -0.7, 1.1], &[(0, 1), (1, 2), (2, 0)], 1);

    // Finite-difference check of d(output)/d(w) for one attention weight
    // matrix; the exhaustive per-layer sweep lives in the acceptance suite.
    let name = "l0.h0.w";
    let base = model.params.get(name).unwrap().clone();
    let report = grad_check(
        |tape, ids| {
            let overrides = BTreeMap::from([(name.to_string(), ids[0])]);
            let pass = model.forward_bound(tape, &g, false, &overrides, None).unwrap();
            tape.sum_all(pass.output)
        },
        &[base],
        1e-6,
        1e-4,
    );
    assert!(report.passed(), "max rel error {}", report.max_rel_error);

    let mut tape = Tape::new();
    let pass = model.forward_on_tape(&mut tape, &g, false).unwrap();
    let grads = tape.backward(pass.output).unwrap();
    for name in model.trainable_names() {
        let id = pass.params[&name];
        let got = grads.get_or_zeros(id, model.params.get(&name).unwrap());
        assert!(got.is_finite(), "gradient for {name} not finite");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let model = real_model(9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mgck");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.layers, model.layers);
    assert_eq!(loaded.task, model.task);
    assert_eq!(loaded.feature_config, model.feature_config);
    for (name, t) in model.params.iter() {
        let lt = loaded.params.get(name).expect(name);
        assert_eq!(lt.shape(), t.shape());
        for (a, b) in t.data().iter().zip(lt.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{name}");
        }
    }
    let cfg = FeatureConfig::default();
    let g = encode_molecule("c1ccccc1O", &cfg).unwrap();
    let a = model.predict(&g).unwrap();
    let b = loaded.predict(&g).unwrap();
    assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
}

#[test]
fn corrupted_checkpoint_rejected() {
    let model = real_model(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mgck");
    save_model(&model, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 9);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_model(&path), Err(LayerError::BadCheckpoint(_))));
}

#[test]
fn batch_norm_training_vs_inference_paths() {
    let cfg = scalar_cfg();
    let mut layer = LayerConfig::graph(LayerKind::Gcn, 2);
    layer.normalization = Normalization::Batch;
    layer.residual = false;
    layer.activation = Activation::Identity;
    let mut model = GnnModel::new(
        cfg,
        vec![layer, LayerConfig::readout(AggregationMode::Sum)],
        Task::Regression { outputs: 2 },
        4,
    )
    .unwrap();
    let g = graph(&[1.0, -2.0, 0.5], &[(0, 1), (1, 2)], 1);

    // Training mode normalizes with batch statistics.
    let mut tape = Tape::new();
    let pass = model.forward_on_tape(&mut tape, &g, true).unwrap();
    assert!(tape.value(pass.output).is_finite());

    // Inference without recorded statistics falls back to identity scaling.
    let before = model.predict(&g).unwrap();
    assert!(before.is_finite());

    // Recording statistics changes the inference output.
    model.update_running_stats("l0", &Tensor::from_rows(&[vec![3.0, 1.0], vec![5.0, 2.0]]), 0.0);
    let after = model.predict(&g).unwrap();
    assert_ne!(before.data(), after.data());
}
