use super::*;

fn run_cmd(args: &[&str]) -> i32 {
    run(args.iter().map(|s| s.to_string()))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.json");
    write(
        &path,
        &format!(
            r#"{{
  "seed": 7,
  "layers": [
    {{"kind": "gcn", "units": 8, "activation": "relu", "heads": 1,
      "residual": true, "normalization": "none", "readout_mode": "sum"}},
    {{"kind": "readout", "units": 0, "activation": "identity", "heads": 1,
      "residual": false, "normalization": "none", "readout_mode": "mean"}},
    {{"kind": "dense", "units": 1, "activation": "identity", "heads": 1,
      "residual": false, "normalization": "none", "readout_mode": "sum"}}
  ],
  "train": {{"max_epochs": 3, "batch_size": 4, "lr_start": 0.001}},
  "split": [0.8, 0.2]{extra}
}}"#
        ),
    );
    path
}

fn training_csv(dir: &Path) -> PathBuf {
    let path = dir.join("data.csv");
    let mut text = String::from("smiles,y\n");
    for (s, y) in [
        ("C", 1.0),
        ("CC", 2.0),
        ("CCC", 3.0),
        ("CCCC", 4.0),
        ("CCO", 3.0),
        ("CCCO", 4.0),
        ("CC(C)C", 4.0),
        ("CCCCC", 5.0),
        ("OCCO", 4.0),
        ("CCN", 3.0),
    ] {
        text.push_str(&format!("{s},{y}\n"));
    }
    write(&path, &text);
    path
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write(&cfg, r#"{"seeed": 1}"#);
    let code = run_cmd(&[
        "encode",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        "x.csv",
        "--output",
        "y.mgrf",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn bad_arguments_exit_2_and_missing_file_exits_1() {
    assert_eq!(run_cmd(&["no-such-command"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.mgrf");
    let code = run_cmd(&[
        "encode",
        "--input",
        dir.path().join("absent.csv").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn encode_keeps_good_rows_in_lenient_mode() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("in.csv");
    write(&csv, "smiles,y\nCCO,1.0\nnot_a_smiles,2.0\nCC,3.0\n");
    let out = dir.path().join("out.mgrf");
    let code = run_cmd(&[
        "encode",
        "--input",
        csv.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--label-column",
        "y",
    ]);
    assert_eq!(code, 0);
    let records = io::read_records(&out, &FeatureConfig::default()).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].1, vec![1.0]);
    assert_eq!(records[1].1, vec![3.0]);

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out.mgrf.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "encode");
    assert!(manifest["checksums"][out.to_str().unwrap()].is_string());
}

#[test]
fn train_twice_gives_byte_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let csv = training_csv(dir.path());
    let mut bytes = Vec::new();
    for name in ["a.ckpt", "b.ckpt"] {
        let out = dir.path().join(name);
        let code = run_cmd(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--input",
            csv.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
            "--label-column",
            "y",
        ]);
        assert_eq!(code, 0);
        bytes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn full_pipeline_train_evaluate_predict_explain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let csv = training_csv(dir.path());
    let ckpt = dir.path().join("model.ckpt");
    let history = dir.path().join("history.csv");
    let code = run_cmd(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        csv.to_str().unwrap(),
        "--output",
        ckpt.to_str().unwrap(),
        "--history",
        history.to_str().unwrap(),
        "--label-column",
        "y",
    ]);
    assert_eq!(code, 0);
    assert!(std::fs::read_to_string(&history).unwrap().starts_with("epoch,"));

    let metrics_path = dir.path().join("metrics.json");
    let code = run_cmd(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        csv.to_str().unwrap(),
        "--output",
        metrics_path.to_str().unwrap(),
        "--label-column",
        "y",
    ]);
    assert_eq!(code, 0);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics_path).unwrap()).unwrap();
    assert!(metrics["rmse"].as_f64().unwrap().is_finite());
    assert!(metrics["mae"].as_f64().unwrap() <= metrics["rmse"].as_f64().unwrap() + 1e-12);

    let smiles_path = dir.path().join("query.txt");
    write(&smiles_path, "CCO\nCCCC\n");
    let preds_path = dir.path().join("preds.csv");
    let code = run_cmd(&[
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        smiles_path.to_str().unwrap(),
        "--output",
        preds_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let preds = std::fs::read_to_string(&preds_path).unwrap();
    assert!(preds.starts_with("smiles,prediction_0\nCCO,"));
    assert_eq!(preds.lines().count(), 3);

    let explain_dir = dir.path().join("explain");
    for method in ["saliency", "gradcam"] {
        let code = run_cmd(&[
            "explain",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--smiles",
            "CCO",
            "--method",
            method,
            "--output-dir",
            explain_dir.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let scores = std::fs::read_to_string(explain_dir.join("attribution.csv")).unwrap();
        assert_eq!(scores.lines().count(), 4);
        assert!(std::fs::read_to_string(explain_dir.join("attribution.svg"))
            .unwrap()
            .starts_with("<svg"));
    }
    assert_eq!(
        run_cmd(&[
            "explain",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--smiles",
            "CCO",
            "--method",
            "occlusion",
            "--output-dir",
            explain_dir.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn train_accepts_record_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let csv = training_csv(dir.path());
    let mgrf = dir.path().join("data.mgrf");
    assert_eq!(
        run_cmd(&[
            "encode",
            "--input",
            csv.to_str().unwrap(),
            "--output",
            mgrf.to_str().unwrap(),
            "--label-column",
            "y",
        ]),
        0
    );
    let ckpt = dir.path().join("model.ckpt");
    let code = run_cmd(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        mgrf.to_str().unwrap(),
        "--output",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
}

#[test]
fn pretrain_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), ", \"pretrain\": {\"epochs\": 2}");
    let corpus = dir.path().join("corpus.txt");
    write(&corpus, "CCCCCCC\nCCCCCCCC\nCCCCCCCCC\n");
    let ckpt = dir.path().join("pretrained.ckpt");
    let code = run_cmd(&[
        "pretrain",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        corpus.to_str().unwrap(),
        "--output",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let model = load_model(&ckpt).unwrap();
    assert!(model.params.get("pretrain.mask").is_none());
    assert!(model.params.get("l0.w").is_some());
}

#[test]
fn rtfilter_reproduces_the_published_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let residuals = dir.path().join("residuals.csv");
    // Symmetric residuals whose population spread puts the 2.58-sigma window
    // close to the published (-1.313, 1.337) bounds.
    let mut text = String::from("residual\n");
    for v in [-0.5, -0.3, -0.1, 0.0, 0.1, 0.3, 0.5, -0.4, 0.4, 0.012] {
        text.push_str(&format!("{v}\n"));
    }
    write(&residuals, &text);

    let candidates = dir.path().join("candidates.csv");
    let mut text =
        String::from("analyte_id,analyte_rt,candidate_smiles,external_score,predicted_rt\n");
    for (s, score, rt) in [
        ("NC(CCOC(=O)CCC(=O)O)C(=O)O", 7.32, 1.39),
        ("CC(=O)NC1C(=O)OC(CO)C(O)C1O", 7.12, 1.71),
        ("CC(O)C(=O)NC(CCC(=O)O)C(=O)O", 7.06, 2.03),
        ("CS(=O)CCCCCCCN=C=S", 7.06, 6.07),
        ("CC(OC(=O)CCC(N)C(=O)O)C(=O)O", 6.87, 1.63),
        ("Cc1ccc(C=NNc2cn[nH]c(=O)n2)o1", 6.73, 2.60),
        ("Cc1nonc1NC(=O)Nc1cccnc1", 5.95, 1.94),
        ("CSC=CC(=O)NC=Cc1ccccc1", 5.78, 4.63),
        ("CSC=CNC(=O)C=Cc1ccccc1", 5.72, 4.95),
        ("CCOC(=O)NP(=O)(N1CC1)N1CC1", 5.34, 2.12),
    ] {
        text.push_str(&format!("a10,5.41,{s},{score},{rt}\n"));
    }
    write(&candidates, &text);

    let out = dir.path().join("verdicts.csv");
    let code = run_cmd(&[
        "rtfilter",
        "--residuals",
        residuals.to_str().unwrap(),
        "--candidates",
        candidates.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let verdicts: Vec<(&str, &str)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[1], cols[5])
        })
        .collect();
    assert_eq!(verdicts.len(), 10);
    let filtered = verdicts.iter().filter(|(_, v)| *v == "yes").count();
    assert_eq!(filtered, 7);
    assert_eq!(
        verdicts.iter().find(|(s, _)| *s == "CS(=O)CCCCCCCN=C=S").unwrap().1,
        "no"
    );
}

#[test]
fn substreams_are_distinct_and_stable() {
    assert_eq!(substream(1, "split"), substream(1, "split"));
    assert_ne!(substream(1, "split"), substream(1, "init"));
    assert_ne!(substream(1, "split"), substream(2, "split"));
}
