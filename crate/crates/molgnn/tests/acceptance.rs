//! End-to-end acceptance checks. Each test covers one numbered criterion and
//! prints a single pass/fail line; run with `--nocapture` to see them.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use molgnn::autodiff::grad_check;
use molgnn::featurize::{encode_molecule, AtomFeature, BondFeature, FeatureConfig};
use molgnn::graph::AggregationMode;
use molgnn::interpret::{gradcam_last, saliency};
use molgnn::io;
use molgnn::layers::{Activation, LayerConfig, LayerKind, Task};
use molgnn::rtfilter::{apply_filter, RtFilterCalibration};
use molgnn::train::{
    evaluate_loss, fit, loss_node, masked_graph_pretrain, masked_symbol_accuracy, LabeledGraphs,
    LossKind, PretrainConfig, Scheduler, SchedulerAction, TrainConfig,
};
use molgnn::{GnnModel, GraphTensor, Molecule, Tape, Tensor};

fn criterion(number: usize, description: &str, f: impl FnOnce()) {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(()) => println!("criterion {number:>2} ({description}): pass"),
        Err(e) => {
            println!("criterion {number:>2} ({description}): FAIL");
            resume_unwind(e);
        }
    }
}

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Node/bond widths of 1 keep finite-difference sweeps cheap.
fn scalar_cfg() -> FeatureConfig {
    FeatureConfig {
        atom_features: vec![AtomFeature::Aromatic],
        bond_features: vec![BondFeature::Conjugated],
        include_edge_features: true,
        self_loops: false,
    }
}

fn random_graph(rng: &mut ChaCha20Rng, max_nodes: usize, max_edges: usize) -> GraphTensor {
    let n = rng.gen_range(2..=max_nodes);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.5..1.5)]).collect();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    // Spanning chain keeps every node reachable, both directions per bond.
    for i in 1..n {
        src.push(i - 1);
        dst.push(i);
        src.push(i);
        dst.push(i - 1);
    }
    while src.len() + 2 <= max_edges && rng.gen_bool(0.4) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            src.push(a);
            dst.push(b);
            src.push(b);
            dst.push(a);
        }
    }
    let m = src.len();
    let mut g = GraphTensor::new(vec![n], Tensor::from_rows(&rows), src, dst).unwrap();
    g.edge_feature =
        Some(Tensor::from_rows(&(0..m).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect::<Vec<_>>()));
    g
}

fn single_layer_model(kind: LayerKind, units: usize, seed: u64) -> GnnModel {
    let mut layer = LayerConfig::graph(kind, units);
    if matches!(kind, LayerKind::Gat | LayerKind::GatE) {
        layer.heads = 2;
        layer.activation = Activation::Tanh;
    }
    GnnModel::new(
        scalar_cfg(),
        vec![
            layer,
            LayerConfig::readout(AggregationMode::Sum),
            LayerConfig::dense(1, Activation::Identity),
        ],
        Task::Regression { outputs: 1 },
        seed,
    )
    .unwrap()
}

#[test]
fn criterion_01_layer_gradients_match_finite_differences() {
    criterion(1, "tape gradients vs central differences, all layer kinds", || {
        let started = Instant::now();
        let graph_kinds =
            [LayerKind::Gcn, LayerKind::Gin, LayerKind::Gat, LayerKind::GatE, LayerKind::MpnnE];
        for seed in 0..20u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, 10, 16);
            let mut models: Vec<GnnModel> =
                graph_kinds.iter().map(|&k| single_layer_model(k, 4, seed)).collect();
            // Zero-initialized biases leave relu pre-activations exactly at
            // the kink, where central differences disagree with the one-sided
            // derivative by construction; jitter to a generic point first.
            for model in &mut models {
                for name in model.trainable_names() {
                    let mut t = model.params.get(&name).unwrap().clone();
                    for v in t.data_mut() {
                        *v += rng.gen_range(0.05..0.15);
                    }
                    model.params.set(&name, t);
                }
            }
            // Dense-only head exercises readout + dense gradients on their own.
            models.push(
                GnnModel::new(
                    scalar_cfg(),
                    vec![
                        LayerConfig::readout(AggregationMode::Mean),
                        LayerConfig::dense(3, Activation::Tanh),
                        LayerConfig::dense(1, Activation::Identity),
                    ],
                    Task::Regression { outputs: 1 },
                    seed,
                )
                .unwrap(),
            );
            for model in &models {
                for name in model.trainable_names() {
                    let base = model.params.get(&name).unwrap().clone();
                    let report = grad_check(
                        |tape, ids| {
                            let overrides = BTreeMap::from([(name.clone(), ids[0])]);
                            let pass =
                                model.forward_bound(tape, &g, false, &overrides, None).unwrap();
                            tape.sum_all(pass.output)
                        },
                        &[base],
                        1e-6,
                        1e-4,
                    );
                    assert!(
                        report.passed(),
                        "seed {seed} param {name}: max rel error {}",
                        report.max_rel_error
                    );
                }
            }
        }
        assert!(started.elapsed().as_secs() < 60, "took {:?}", started.elapsed());
    });
}

#[test]
fn criterion_02_disjoint_batches_match_single_graphs() {
    criterion(2, "merged-batch predictions equal per-graph predictions", || {
        let started = Instant::now();
        let model = GnnModel::new(
            scalar_cfg(),
            vec![
                LayerConfig::graph(LayerKind::Gcn, 6),
                LayerConfig::graph(LayerKind::Gin, 6),
                LayerConfig::readout(AggregationMode::Mean),
                LayerConfig::dense(1, Activation::Identity),
            ],
            Task::Regression { outputs: 1 },
            3,
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        for _ in 0..100 {
            let graphs: Vec<GraphTensor> =
                (0..rng.gen_range(2..=6)).map(|_| random_graph(&mut rng, 8, 16)).collect();
            let merged = GraphTensor::merge(&graphs).unwrap();
            let batch_pred = model.predict(&merged).unwrap();
            for (i, g) in graphs.iter().enumerate() {
                let single = model.predict(g).unwrap();
                let diff = (batch_pred.at(i, 0) - single.at(0, 0)).abs();
                assert!(diff < 1e-8, "graph {i}: diff {diff}");
            }
        }
        assert!(started.elapsed().as_secs() < 30, "took {:?}", started.elapsed());
    });
}

fn permute_graph(g: &GraphTensor, perm: &[usize]) -> GraphTensor {
    let d = g.node_feature.cols();
    let mut rows = vec![vec![0.0; d]; g.num_nodes()];
    for (old, &new) in perm.iter().enumerate() {
        rows[new] = g.node_feature.data()[old * d..(old + 1) * d].to_vec();
    }
    let src: Vec<usize> = g.edge_src.iter().map(|&s| perm[s]).collect();
    let dst: Vec<usize> = g.edge_dst.iter().map(|&t| perm[t]).collect();
    let mut order: Vec<usize> = (0..src.len()).collect();
    order.sort_by_key(|&e| (src[e], dst[e]));
    let mut out = GraphTensor::new(
        g.sizes.clone(),
        Tensor::from_rows(&rows),
        order.iter().map(|&e| src[e]).collect(),
        order.iter().map(|&e| dst[e]).collect(),
    )
    .unwrap();
    if let Some(ef) = &g.edge_feature {
        let w = ef.cols();
        let erows: Vec<Vec<f64>> =
            order.iter().map(|&e| ef.data()[e * w..(e + 1) * w].to_vec()).collect();
        out.edge_feature = Some(Tensor::from_rows(&erows));
    }
    out
}

fn random_permutation(rng: &mut ChaCha20Rng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    perm
}

#[test]
fn criterion_03_readout_is_permutation_invariant() {
    criterion(3, "sum/mean readout invariant under node relabeling", || {
        let mut rng = ChaCha20Rng::seed_from_u64(50);
        for mode in [AggregationMode::Sum, AggregationMode::Mean] {
            let model = GnnModel::new(
                scalar_cfg(),
                vec![
                    LayerConfig::graph(LayerKind::Gcn, 5),
                    LayerConfig::readout(mode),
                    LayerConfig::dense(1, Activation::Identity),
                ],
                Task::Regression { outputs: 1 },
                8,
            )
            .unwrap();
            for _ in 0..50 {
                let g = random_graph(&mut rng, 9, 16);
                let baseline = model.predict(&g).unwrap().at(0, 0);
                let perm = random_permutation(&mut rng, g.num_nodes());
                let shuffled = model.predict(&permute_graph(&g, &perm)).unwrap().at(0, 0);
                assert!((baseline - shuffled).abs() < 1e-12);
            }
        }
    });
}

#[test]
fn criterion_04_propagate_matches_dense_adjacency() {
    criterion(4, "sparse propagate equals dense adjacency products", || {
        let mut rng = ChaCha20Rng::seed_from_u64(60);
        for case in 0..200 {
            let mut g = random_graph(&mut rng, 12, 24);
            if case % 2 == 0 {
                g.edge_weight =
                    Some((0..g.num_edges()).map(|_| rng.gen_range(-1.0..2.0)).collect());
            }
            let n = g.num_nodes();
            let mut adjacency = vec![vec![0.0f64; n]; n];
            let mut counts = vec![0usize; n];
            for (e, (&s, &t)) in g.edge_src.iter().zip(&g.edge_dst).enumerate() {
                adjacency[t][s] += g.edge_weight.as_ref().map_or(1.0, |ws| ws[e]);
                counts[t] += 1;
            }
            for mode in [AggregationMode::Sum, AggregationMode::Mean] {
                let sparse = g.propagate(mode);
                for i in 0..n {
                    let mut dense: f64 =
                        (0..n).map(|j| adjacency[i][j] * g.node_feature.at(j, 0)).sum();
                    if mode == AggregationMode::Mean && counts[i] > 0 {
                        dense /= counts[i] as f64;
                    }
                    assert!(
                        (dense - sparse.node_feature.at(i, 0)).abs() < 1e-12,
                        "case {case} node {i}"
                    );
                }
            }
        }
    });
}

#[test]
fn criterion_05_chemistry_corpus_matches_published_data() {
    criterion(5, "formulas, rings, and aromatic counts on the 20-molecule corpus", || {
        let (rows, report) =
            io::read_table(&fixture("chem_corpus.csv"), "smiles", &[]).unwrap();
        assert!(report.rejected.is_empty());
        assert_eq!(rows.len(), 20);
        let text = std::fs::read_to_string(fixture("chem_corpus.csv")).unwrap();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let (name, smiles, formula, ring_sizes, aromatic) =
                (cols[0], cols[1], cols[2], cols[3], cols[4]);
            let mol = Molecule::from_smiles(smiles).unwrap();
            assert_eq!(mol.molecular_formula(), formula, "{name}");
            let mut sizes: Vec<usize> = mol.rings.iter().map(Vec::len).collect();
            sizes.sort_unstable();
            let expected_sizes: Vec<usize> = if ring_sizes.is_empty() {
                vec![]
            } else {
                ring_sizes.split(';').map(|s| s.parse().unwrap()).collect()
            };
            assert_eq!(sizes, expected_sizes, "{name}");
            let arom = mol.atoms.iter().filter(|a| a.aromatic).count();
            assert_eq!(arom, aromatic.parse::<usize>().unwrap(), "{name}");
        }
    });
}

#[test]
fn criterion_06_scheduler_state_machine() {
    criterion(6, "plateau decay at 11, stop at 21, best weights restored", || {
        let cfg = TrainConfig::default();
        let mut scheduler = Scheduler::new(&cfg);
        let mut decay_epochs = Vec::new();
        let mut stop_epoch = None;
        for epoch in 1..=50 {
            match scheduler.observe(epoch, 1.0) {
                SchedulerAction::Decayed => decay_epochs.push(epoch),
                SchedulerAction::Stop => {
                    stop_epoch = Some(epoch);
                    break;
                }
                _ => {}
            }
        }
        assert_eq!(decay_epochs, vec![11]);
        assert_eq!(stop_epoch, Some(21));

        // Best-weight restoration: retraining past the best epoch must leave
        // the model reproducing the recorded best validation loss.
        let fcfg = scalar_cfg();
        let entries = [("C", 1.0), ("CC", 2.0), ("CCC", 3.0), ("CCCC", 4.0), ("CCCCC", 5.0)];
        let data = LabeledGraphs {
            graphs: entries.iter().map(|(s, _)| encode_molecule(s, &fcfg).unwrap()).collect(),
            labels: entries.iter().map(|(_, y)| vec![*y]).collect(),
            masks: entries.iter().map(|_| vec![1.0]).collect(),
        };
        let mut model = GnnModel::new(
            fcfg,
            vec![
                LayerConfig::graph(LayerKind::Gcn, 4),
                LayerConfig::readout(AggregationMode::Sum),
                LayerConfig::dense(1, Activation::Identity),
            ],
            Task::Regression { outputs: 1 },
            13,
        )
        .unwrap();
        let tcfg = TrainConfig { lr_start: 5e-3, max_epochs: 25, batch_size: 5, ..cfg };
        let history = fit(&mut model, &data, &data, &tcfg).unwrap();
        let restored = evaluate_loss(&model, &data, tcfg.loss).unwrap();
        assert!((restored - history.best_val_loss).abs() < 1e-12);
    });
}

#[test]
fn criterion_07_solubility_regression_beats_the_mean_predictor() {
    criterion(7, "solubility GCN: test RMSE <= 1.20 and >= 40% under train-mean", || {
        let started = Instant::now();
        let (rows, _) =
            io::read_table(&fixture("solubility.csv"), "smiles", &["log_solubility"]).unwrap();
        let fcfg = FeatureConfig::default();
        let mut data = LabeledGraphs { graphs: vec![], labels: vec![], masks: vec![] };
        for row in &rows {
            data.graphs.push(encode_molecule(&row.smiles, &fcfg).unwrap());
            data.labels.push(row.labels.clone());
            data.masks.push(row.mask.clone());
        }
        let parts = io::split(
            data.graphs.len(),
            &[0.7, 0.05, 0.25],
            101,
            io::SplitStrategy::Random,
            None,
        )
        .unwrap();
        let subset = |idx: &[usize]| LabeledGraphs {
            graphs: idx.iter().map(|&i| data.graphs[i].clone()).collect(),
            labels: idx.iter().map(|&i| data.labels[i].clone()).collect(),
            masks: idx.iter().map(|&i| data.masks[i].clone()).collect(),
        };
        let (train_set, val_set, test_set) =
            (subset(&parts[0]), subset(&parts[1]), subset(&parts[2]));

        let mut model = GnnModel::new(
            fcfg,
            vec![
                LayerConfig::graph(LayerKind::Gcn, 128),
                LayerConfig::graph(LayerKind::Gcn, 128),
                LayerConfig::readout(AggregationMode::Mean),
                LayerConfig::dense(128, Activation::Relu),
                LayerConfig::dense(1, Activation::Identity),
            ],
            Task::Regression { outputs: 1 },
            77,
        )
        .unwrap();
        let tcfg = TrainConfig {
            lr_start: 1e-3,
            max_epochs: 30,
            batch_size: 64,
            seed: 7,
            ..TrainConfig::default()
        };
        fit(&mut model, &train_set, &val_set, &tcfg).unwrap();

        let rmse = |set: &LabeledGraphs, preds: &[f64]| -> f64 {
            let mse: f64 = set
                .labels
                .iter()
                .zip(preds)
                .map(|(y, p)| (y[0] - p).powi(2))
                .sum::<f64>()
                / set.labels.len() as f64;
            mse.sqrt()
        };
        let test_preds: Vec<f64> = test_set
            .graphs
            .iter()
            .map(|g| model.predict(g).unwrap().at(0, 0))
            .collect();
        let model_rmse = rmse(&test_set, &test_preds);
        let train_mean: f64 =
            train_set.labels.iter().map(|y| y[0]).sum::<f64>() / train_set.labels.len() as f64;
        let mean_preds = vec![train_mean; test_set.labels.len()];
        let mean_rmse = rmse(&test_set, &mean_preds);

        println!("  model rmse {model_rmse:.4}, train-mean rmse {mean_rmse:.4}");
        assert!(model_rmse <= 1.20, "model rmse {model_rmse}");
        assert!(
            model_rmse <= 0.6 * mean_rmse,
            "model rmse {model_rmse} not 40% under mean rmse {mean_rmse}"
        );
        assert!(started.elapsed().as_secs() < 1800, "took {:?}", started.elapsed());
    });
}

#[test]
fn criterion_08_published_rt_filter_verdicts() {
    criterion(8, "ten published keep/discard verdicts reproduced", || {
        let calib = RtFilterCalibration::from_bounds(-1.313, 1.337);
        let candidates: Vec<(String, f64, f64)> = [
            ("NC(CCOC(=O)CCC(=O)O)C(=O)O", 7.32, 1.39, true),
            ("CC(=O)NC1C(=O)OC(CO)C(O)C1O", 7.12, 1.71, true),
            ("CC(O)C(=O)NC(CCC(=O)O)C(=O)O", 7.06, 2.03, true),
            ("CS(=O)CCCCCCCN=C=S", 7.06, 6.07, false),
            ("CC(OC(=O)CCC(N)C(=O)O)C(=O)O", 6.87, 1.63, true),
            ("Cc1ccc(C=NNc2cn[nH]c(=O)n2)o1", 6.73, 2.60, true),
            ("Cc1nonc1NC(=O)Nc1cccnc1", 5.95, 1.94, true),
            ("CSC=CC(=O)NC=Cc1ccccc1", 5.78, 4.63, false),
            ("CSC=CNC(=O)C=Cc1ccccc1", 5.72, 4.95, false),
            ("CCOC(=O)NP(=O)(N1CC1)N1CC1", 5.34, 2.12, true),
        ]
        .iter()
        .map(|(s, score, rt, _)| (s.to_string(), *score, *rt))
        .collect();
        let expected_out =
            [true, true, true, false, true, true, true, false, false, true];
        let verdicts = apply_filter(&calib, 5.41, &candidates);
        assert_eq!(verdicts.len(), 10);
        for (v, expected) in verdicts.iter().zip(expected_out) {
            assert_eq!(v.filtered_out, expected, "{}", v.candidate_smiles);
        }
        let bold = verdicts.iter().find(|v| v.candidate_smiles == "CS(=O)CCCCCCCN=C=S").unwrap();
        assert!(!bold.filtered_out);
        assert!((bold.rt_difference - (-0.66)).abs() < 1e-9);
    });
}

#[test]
fn criterion_09_metric_oracles() {
    criterion(9, "roc_auc vs pair counting; bce(0, 1) = ln 2", || {
        let mut rng = ChaCha20Rng::seed_from_u64(90);
        let mut scored = 0;
        for _ in 0..500 {
            let len = rng.gen_range(2..=12);
            let preds: Vec<f64> =
                (0..len).map(|_| (rng.gen_range(0..6) as f64) / 5.0).collect();
            let targets: Vec<f64> = (0..len).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            let pred =
                Tensor::from_rows(&preds.iter().map(|&v| vec![v]).collect::<Vec<_>>());
            let target =
                Tensor::from_rows(&targets.iter().map(|&v| vec![v]).collect::<Vec<_>>());
            let mask = pred.map(|_| 1.0);
            let result =
                molgnn::train::metric(molgnn::train::MetricKind::RocAuc, &pred, &target, &mask);
            let (mut good, mut pairs) = (0.0, 0.0);
            for i in 0..len {
                for j in 0..len {
                    if targets[i] > 0.5 && targets[j] < 0.5 {
                        pairs += 1.0;
                        if preds[i] > preds[j] {
                            good += 1.0;
                        } else if preds[i] == preds[j] {
                            good += 0.5;
                        }
                    }
                }
            }
            if pairs == 0.0 {
                assert!(result.is_err(), "single-class column must error");
            } else {
                let auc = result.unwrap().value;
                assert!((auc - good / pairs).abs() < 1e-12);
                scored += 1;
            }
        }
        assert!(scored > 300, "too few two-class arrays: {scored}");

        let mut tape = Tape::new();
        let logit = tape.input(Tensor::from_rows(&[vec![0.0]]), true);
        let target = Tensor::from_rows(&[vec![1.0]]);
        let mask = Tensor::from_rows(&[vec![1.0]]);
        let loss = loss_node(&mut tape, LossKind::Bce, logit, &target, &mask).unwrap();
        assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);
    });
}

#[test]
fn criterion_10_record_format_stability() {
    criterion(10, "byte-stable record files, f32 round trip, digest guard", || {
        let fcfg = FeatureConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(100);
        let graphs: Vec<GraphTensor> = (0..100)
            .map(|_| {
                let mut g = random_graph(&mut rng, 10, 20);
                // Re-shape features onto the full layout at f32-exact values.
                let n = g.num_nodes();
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|_| {
                        (0..fcfg.atom_width())
                            .map(|_| f64::from(rng.gen_range(-8i32..8) as f32) / 4.0)
                            .collect()
                    })
                    .collect();
                g.node_feature = Tensor::from_rows(&rows);
                let erows: Vec<Vec<f64>> = (0..g.num_edges())
                    .map(|_| {
                        (0..fcfg.bond_width())
                            .map(|_| f64::from(rng.gen_range(0i32..4) as f32))
                            .collect()
                    })
                    .collect();
                g.edge_feature = Some(Tensor::from_rows(&erows));
                g
            })
            .collect();
        let labels: Vec<(Vec<f64>, Vec<f64>)> =
            (0..100).map(|i| (vec![i as f64 / 8.0], vec![1.0])).collect();

        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.mgrf"), dir.path().join("b.mgrf"));
        io::write_records(&a, &graphs, &labels, &fcfg).unwrap();
        io::write_records(&b, &graphs, &labels, &fcfg).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        let back = io::read_records(&a, &fcfg).unwrap();
        assert_eq!(back.len(), 100);
        for ((g, l, m), (orig, (ol, om))) in back.iter().zip(graphs.iter().zip(&labels)) {
            assert_eq!(g.node_feature.data(), orig.node_feature.data());
            assert_eq!(
                g.edge_feature.as_ref().unwrap().data(),
                orig.edge_feature.as_ref().unwrap().data()
            );
            assert_eq!(g.edge_src, orig.edge_src);
            assert_eq!(l, ol);
            assert_eq!(m, om);
        }

        let other = FeatureConfig {
            atom_features: vec![AtomFeature::Aromatic],
            ..FeatureConfig::default()
        };
        assert!(matches!(
            io::read_records(&a, &other),
            Err(io::IoError::DigestMismatch)
        ));
    });
}

/// Molecules whose element is a pure function of node degree: terminals are
/// oxygen, chain atoms carbon, branch points nitrogen. Structure alone then
/// determines the masked symbol, so it is learnable from context.
fn degree_coded_corpus(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(count);
    for _ in 0..count {
        let smiles = if rng.gen_bool(0.5) {
            let k = rng.gen_range(2..=8);
            format!("O{}O", "C".repeat(k))
        } else {
            let (a, b, c) = (
                rng.gen_range(1..=4),
                rng.gen_range(1..=4),
                rng.gen_range(1..=4),
            );
            format!("O{}N({}O){}O", "C".repeat(a), "C".repeat(b), "C".repeat(c))
        };
        corpus.push(smiles);
    }
    corpus
}

#[test]
fn criterion_11_masked_pretraining_beats_majority_class() {
    criterion(11, "masked-symbol accuracy >= majority + 10 points", || {
        let started = Instant::now();
        let corpus = degree_coded_corpus(500, 200);
        let fcfg = FeatureConfig::default();
        let graphs: Vec<GraphTensor> =
            corpus.iter().map(|s| encode_molecule(s, &fcfg).unwrap()).collect();
        let (train_graphs, held_out) = graphs.split_at(400);
        let mut model = GnnModel::new(
            fcfg,
            vec![
                LayerConfig::graph(LayerKind::Gcn, 32),
                LayerConfig::graph(LayerKind::Gcn, 32),
                LayerConfig::readout(AggregationMode::Mean),
                LayerConfig::dense(1, Activation::Identity),
            ],
            Task::Regression { outputs: 1 },
            21,
        )
        .unwrap();
        let pcfg = PretrainConfig { epochs: 25, lr: 5e-3, seed: 6, ..PretrainConfig::default() };
        let report = masked_graph_pretrain(&mut model, train_graphs, &pcfg).unwrap();
        let (accuracy, majority) =
            masked_symbol_accuracy(&model, &report, held_out, pcfg.mask_rate, 17).unwrap();
        println!("  masked accuracy {accuracy:.3}, majority baseline {majority:.3}");
        assert!(
            accuracy >= majority + 0.10,
            "accuracy {accuracy:.3} vs majority {majority:.3}"
        );
        assert!(started.elapsed().as_secs() < 600, "took {:?}", started.elapsed());
    });
}

#[test]
fn criterion_12_attribution_properties() {
    criterion(12, "saliency/gradcam zero, scaling, and permutation laws", || {
        let fcfg = FeatureConfig::default();
        let build = |seed: u64| {
            GnnModel::new(
                fcfg.clone(),
                vec![
                    LayerConfig::graph(LayerKind::Gcn, 6),
                    LayerConfig::readout(AggregationMode::Sum),
                    LayerConfig::dense(1, Activation::Identity),
                ],
                Task::Regression { outputs: 1 },
                seed,
            )
            .unwrap()
        };

        // Zero weights -> all-zero saliency.
        let mut zero_model = build(1);
        for name in zero_model.trainable_names() {
            let z = zero_model.params.get(&name).unwrap().map(|_| 0.0);
            zero_model.params.set(&name, z);
        }
        let g = encode_molecule("CC(=O)Oc1ccccc1C(=O)O", &fcfg).unwrap();
        let map = saliency(&zero_model, &g, "x").unwrap();
        assert!(map.scores.iter().all(|&s| s == 0.0));

        // Positive output scaling preserves the gradcam atom ranking.
        let model = build(2);
        let base = gradcam_last(&model, &g, "x").unwrap();
        let mut scaled = model.clone();
        for name in ["l2.w", "l2.b"] {
            let t = scaled.params.get(name).unwrap().map(|v| v * 7.5);
            scaled.params.set(name, t);
        }
        let after = gradcam_last(&scaled, &g, "x").unwrap();
        let rank = |scores: &[f64]| {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
            order
        };
        assert_eq!(rank(&base.scores), rank(&after.scores));

        // Permutation equivariance, 100 random cases.
        let mut rng = ChaCha20Rng::seed_from_u64(120);
        let pool =
            ["CCO", "CC(=O)O", "c1ccccc1O", "CCN(CC)CC", "OCC(O)CO", "Cc1ccncc1", "CC(C)CC(=O)O"];
        for case in 0..100 {
            let smiles = pool[case % pool.len()];
            let g = encode_molecule(smiles, &fcfg).unwrap();
            let perm = random_permutation(&mut rng, g.num_nodes());
            let pg = permute_graph(&g, &perm);
            let (s0, s1) =
                (saliency(&model, &g, "x").unwrap(), saliency(&model, &pg, "x").unwrap());
            let (c0, c1) =
                (gradcam_last(&model, &g, "x").unwrap(), gradcam_last(&model, &pg, "x").unwrap());
            for (old, &new) in perm.iter().enumerate() {
                assert!((s0.scores[old] - s1.scores[new]).abs() < 1e-9, "{smiles} case {case}");
                assert!((c0.scores[old] - c1.scores[new]).abs() < 1e-9, "{smiles} case {case}");
            }
        }
    });
}
