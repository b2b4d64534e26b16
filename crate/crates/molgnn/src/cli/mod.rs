//! Command-line entry points tying encoding, training, evaluation,
//! prediction, attribution, pretraining, and retention-time filtering
//! together. Exit codes: 0 success, 1 runtime failure, 2 bad configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::featurize::{encode_batch, encode_molecule, FeatureConfig};
use crate::graph::AggregationMode;
use crate::interpret;
use crate::io::{self, SplitStrategy};
use crate::layers::{
    load_model, save_model, Activation, GnnModel, LayerConfig, LayerKind, Task,
};
use crate::rtfilter;
use crate::train::{
    self, evaluate_loss, fit, masked_graph_pretrain, metric, LabeledGraphs, MetricKind,
    PretrainConfig, TrainConfig,
};

#[derive(Debug)]
enum CliError {
    /// Bad configuration or arguments; exit code 2.
    Config(String),
    /// Any downstream failure; exit code 1.
    Run(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "error[config]: {m}"),
            CliError::Run(m) => write!(f, "error: {m}"),
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// JSON run configuration. Unknown keys are rejected at load time; every
/// field has a default so a minimal config can be `{}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub features: FeatureConfig,
    pub layers: Vec<LayerConfig>,
    pub task: Task,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    /// Train/validation/test fractions used when a command splits its input.
    pub split: Vec<f64>,
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            features: FeatureConfig::default(),
            layers: vec![
                LayerConfig::graph(LayerKind::Gcn, 128),
                LayerConfig::graph(LayerKind::Gcn, 128),
                LayerConfig::readout(AggregationMode::Mean),
                LayerConfig::dense(128, Activation::Relu),
                LayerConfig::dense(1, Activation::Identity),
            ],
            task: Task::Regression { outputs: 1 },
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            split: vec![0.7, 0.05, 0.25],
            strict: false,
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                reject_unknown_keys(&value)?;
                serde_json::from_value(value)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        // Training randomness flows from the one top-level seed.
        cfg.train.seed = substream(cfg.seed, "shuffle");
        cfg.pretrain.seed = substream(cfg.seed, "mask");
        cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.split.is_empty() {
            return Err(CliError::Config("split must list at least one fraction".into()));
        }
        Ok(cfg)
    }

    fn digest_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

const KNOWN_KEYS: [&str; 8] =
    ["seed", "features", "layers", "task", "train", "pretrain", "split", "strict"];

fn reject_unknown_keys(value: &serde_json::Value) -> Result<(), CliError> {
    let Some(map) = value.as_object() else {
        return Err(CliError::Config("config must be a JSON object".into()));
    };
    for key in map.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("unknown config key {key:?}")));
        }
    }
    Ok(())
}

/// Named deterministic sub-stream of the top-level seed.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Reproducibility record emitted beside each run's primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
    /// sha256 of each output file.
    pub checksums: BTreeMap<String, String>,
}

fn write_manifest(
    command: &str,
    cfg: &RunConfig,
    inputs: &[&Path],
    outputs: &[&Path],
    started: Instant,
) -> Result<(), CliError> {
    let mut checksums = BTreeMap::new();
    for out in outputs {
        let bytes = std::fs::read(out).map_err(run_err)?;
        checksums.insert(out.display().to_string(), hex(&Sha256::digest(&bytes)));
    }
    let manifest = RunManifest {
        command: command.to_string(),
        config_digest: cfg.digest_hex(),
        seed: cfg.seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        checksums,
    };
    let path = match outputs.first() {
        Some(p) => {
            let mut os = p.as_os_str().to_owned();
            os.push(".manifest.json");
            PathBuf::from(os)
        }
        None => PathBuf::from(format!("{command}.manifest.json")),
    };
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(run_err)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Argument grammar
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "molgnn", version, about = "Molecular graph networks from the command line")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// CSV of SMILES and labels -> binary record file.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "smiles")]
        smiles_column: String,
        /// Repeatable; order fixes the label layout.
        #[arg(long = "label-column")]
        label_columns: Vec<String>,
    },
    /// Labeled data (CSV or record file) -> trained checkpoint + history CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, default_value = "smiles")]
        smiles_column: String,
        #[arg(long = "label-column")]
        label_columns: Vec<String>,
    },
    /// Checkpoint + labeled data -> metrics JSON.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "smiles")]
        smiles_column: String,
        #[arg(long = "label-column")]
        label_columns: Vec<String>,
    },
    /// Checkpoint + SMILES list (one per line) -> predictions CSV.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Checkpoint + SMILES -> per-atom attribution CSV + SVG.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        smiles: String,
        #[arg(long, default_value = "gradcam")]
        method: String,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Unlabeled SMILES corpus (one per line) -> pretrained checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Residuals CSV + candidates CSV -> verdict report CSV.
    Rtfilter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        residuals: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2.58)]
        z: f64,
    },
}

pub fn run(args: impl Iterator<Item = String>) -> i32 {
    let argv = std::iter::once("molgnn".to_string()).chain(args);
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are success, bad arguments are config errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = substream(seed, "shuffle");
        cfg.pretrain.seed = substream(seed, "mask");
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let started = Instant::now();
    match command {
        Command::Encode { common, input, output, smiles_column, label_columns } => {
            let cfg = load_config(&common)?;
            let cols: Vec<&str> = label_columns.iter().map(String::as_str).collect();
            let (rows, report) =
                io::read_table(&input, &smiles_column, &cols).map_err(run_err)?;
            for (row, reason) in &report.rejected {
                eprintln!("row {row}: {reason}");
            }
            if cfg.strict && !report.rejected.is_empty() {
                return Err(CliError::Run(format!(
                    "strict mode: {} rows rejected",
                    report.rejected.len()
                )));
            }
            let smiles: Vec<String> = rows.iter().map(|r| r.smiles.clone()).collect();
            let (batch, batch_report) =
                encode_batch(&smiles, &cfg.features, cfg.strict).map_err(run_err)?;
            for (i, err) in &batch_report.rejected {
                eprintln!("row {i} ({}): {err}", smiles[*i]);
            }
            let graphs = batch.separate();
            let labels: Vec<(Vec<f64>, Vec<f64>)> = batch_report
                .kept
                .iter()
                .map(|&i| (rows[i].labels.clone(), rows[i].mask.clone()))
                .collect();
            io::write_records(&output, &graphs, &labels, &cfg.features).map_err(run_err)?;
            println!("encoded {} of {} rows", graphs.len(), rows.len());
            write_manifest("encode", &cfg, &[&input], &[&output], started)
        }
        Command::Train { common, input, output, history, smiles_column, label_columns } => {
            let cfg = load_config(&common)?;
            let data = load_labeled(&input, &cfg, &smiles_column, &label_columns)?;
            let n = data.graphs.len();
            let parts = io::split(
                n,
                &cfg.split,
                substream(cfg.seed, "split"),
                SplitStrategy::Random,
                None,
            )
            .map_err(run_err)?;
            let train_set = subset(&data, &parts[0]);
            let val_set = if parts.len() > 1 && !parts[1].is_empty() {
                subset(&data, &parts[1])
            } else {
                subset(&data, &parts[0])
            };
            let mut model = GnnModel::new(
                cfg.features.clone(),
                cfg.layers.clone(),
                cfg.task,
                substream(cfg.seed, "init"),
            )
            .map_err(run_err)?;
            let hist = fit(&mut model, &train_set, &val_set, &cfg.train).map_err(run_err)?;
            for r in &hist.epochs {
                println!(
                    "epoch {:>3}  train {:.6}  val {:.6}  lr {:.2e}",
                    r.epoch, r.train_loss, r.val_loss, r.lr
                );
            }
            save_model(&model, &output).map_err(run_err)?;
            let mut outputs: Vec<&Path> = vec![&output];
            if let Some(h) = &history {
                hist.write_csv(h).map_err(run_err)?;
                outputs.push(h);
            }
            println!("best epoch {}  val {:.6}", hist.best_epoch, hist.best_val_loss);
            write_manifest("train", &cfg, &[&input], &outputs, started)
        }
        Command::Evaluate { common, checkpoint, input, output, smiles_column, label_columns } => {
            let cfg = load_config(&common)?;
            let model = load_model(&checkpoint).map_err(run_err)?;
            let mut cfg = cfg;
            cfg.features = model.feature_config.clone();
            let data = load_labeled(&input, &cfg, &smiles_column, &label_columns)?;
            let metrics = evaluate_metrics(&model, &data)?;
            let json = serde_json::to_string_pretty(&metrics).unwrap();
            match &output {
                Some(p) => {
                    std::fs::write(p, &json).map_err(run_err)?;
                    write_manifest("evaluate", &cfg, &[&input, &checkpoint], &[p], started)?;
                }
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Predict { common, checkpoint, input, output } => {
            let cfg = load_config(&common)?;
            let model = load_model(&checkpoint).map_err(run_err)?;
            let smiles = read_smiles_lines(&input)?;
            let mut w = csv::Writer::from_path(&output).map_err(run_err)?;
            let outputs = model.task.outputs();
            let mut header = vec!["smiles".to_string()];
            header.extend((0..outputs).map(|i| format!("prediction_{i}")));
            w.write_record(&header).map_err(run_err)?;
            for s in &smiles {
                let g = encode_molecule(s, &model.feature_config).map_err(run_err)?;
                let pred = model.predict(&g).map_err(run_err)?;
                let mut row = vec![s.clone()];
                row.extend(pred.data().iter().map(|v| format!("{v}")));
                w.write_record(&row).map_err(run_err)?;
            }
            w.flush().map_err(run_err)?;
            write_manifest("predict", &cfg, &[&input, &checkpoint], &[&output], started)
        }
        Command::Explain { common, checkpoint, smiles, method, output_dir } => {
            let cfg = load_config(&common)?;
            let model = load_model(&checkpoint).map_err(run_err)?;
            let mol = crate::chem::Molecule::from_smiles(&smiles).map_err(run_err)?;
            let g = encode_molecule(&smiles, &model.feature_config).map_err(run_err)?;
            let map = match method.as_str() {
                "saliency" => interpret::saliency(&model, &g, &smiles).map_err(run_err)?,
                "gradcam" => interpret::gradcam_last(&model, &g, &smiles).map_err(run_err)?,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown attribution method {other:?} (expected saliency or gradcam)"
                    )))
                }
            };
            std::fs::create_dir_all(&output_dir).map_err(run_err)?;
            let csv_path = output_dir.join("attribution.csv");
            let svg_path = output_dir.join("attribution.svg");
            interpret::write_scores_csv(&csv_path, &mol, &map).map_err(run_err)?;
            let svg = interpret::render_svg(&mol, &map, substream(cfg.seed, "layout"));
            std::fs::write(&svg_path, svg).map_err(run_err)?;
            println!("prediction {:.6}", map.prediction);
            write_manifest("explain", &cfg, &[&checkpoint], &[&csv_path, &svg_path], started)
        }
        Command::Pretrain { common, input, output } => {
            let cfg = load_config(&common)?;
            let smiles = read_smiles_lines(&input)?;
            let graphs: Vec<_> = smiles
                .iter()
                .map(|s| encode_molecule(s, &cfg.features))
                .collect::<Result<_, _>>()
                .map_err(run_err)?;
            let mut model = GnnModel::new(
                cfg.features.clone(),
                cfg.layers.clone(),
                cfg.task,
                substream(cfg.seed, "init"),
            )
            .map_err(run_err)?;
            let report =
                masked_graph_pretrain(&mut model, &graphs, &cfg.pretrain).map_err(run_err)?;
            for (i, loss) in report.epoch_losses.iter().enumerate() {
                println!("epoch {:>3}  loss {loss:.6}", i + 1);
            }
            save_model(&model, &output).map_err(run_err)?;
            write_manifest("pretrain", &cfg, &[&input], &[&output], started)
        }
        Command::Rtfilter { common, residuals, candidates, output, z } => {
            let cfg = load_config(&common)?;
            let calib = read_residuals(&residuals, z)?;
            let verdicts = read_candidates(&candidates, &calib)?;
            let mut w = csv::Writer::from_path(&output).map_err(run_err)?;
            w.write_record([
                "analyte_id",
                "candidate_smiles",
                "external_score",
                "predicted_rt",
                "rt_difference",
                "filtered_out",
            ])
            .map_err(run_err)?;
            for (analyte, vs) in &verdicts {
                for v in vs {
                    w.write_record([
                        analyte.clone(),
                        v.candidate_smiles.clone(),
                        format!("{}", v.external_score),
                        format!("{}", v.predicted_rt),
                        format!("{}", v.rt_difference),
                        if v.filtered_out { "yes".into() } else { "no".into() },
                    ])
                    .map_err(run_err)?;
                }
            }
            w.flush().map_err(run_err)?;
            let report = rtfilter::filter_report(
                &verdicts.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>(),
                &vec![None; verdicts.len()],
            );
            println!(
                "bounds [{:.3}, {:.3}]  filtered fraction {:.3}",
                calib.lower, calib.upper, report.overall_filtered_fraction
            );
            write_manifest("rtfilter", &cfg, &[&residuals, &candidates], &[&output], started)
        }
    }
}

// ---------------------------------------------------------------------------
// Shared loading helpers
// ---------------------------------------------------------------------------

fn read_smiles_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(run_err)?;
    let lines: Vec<String> =
        text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if lines.is_empty() {
        return Err(CliError::Run(format!("{} contains no SMILES", path.display())));
    }
    Ok(lines)
}

fn load_labeled(
    path: &Path,
    cfg: &RunConfig,
    smiles_column: &str,
    label_columns: &[String],
) -> Result<LabeledGraphs, CliError> {
    if path.extension().is_some_and(|e| e == "mgrf") {
        let records = io::read_records(path, &cfg.features).map_err(run_err)?;
        let mut out = LabeledGraphs { graphs: vec![], labels: vec![], masks: vec![] };
        for (g, labels, mask) in records {
            out.graphs.push(g);
            out.labels.push(labels);
            out.masks.push(mask);
        }
        if out.graphs.is_empty() {
            return Err(CliError::Run(format!("{} holds no records", path.display())));
        }
        return Ok(out);
    }
    let cols: Vec<&str> = label_columns.iter().map(String::as_str).collect();
    if cols.is_empty() {
        return Err(CliError::Config(
            "CSV input needs at least one --label-column".into(),
        ));
    }
    let (rows, report) = io::read_table(path, smiles_column, &cols).map_err(run_err)?;
    if cfg.strict && !report.rejected.is_empty() {
        return Err(CliError::Run(format!("strict mode: {} rows rejected", report.rejected.len())));
    }
    let smiles: Vec<String> = rows.iter().map(|r| r.smiles.clone()).collect();
    let (batch, batch_report) =
        encode_batch(&smiles, &cfg.features, cfg.strict).map_err(run_err)?;
    let graphs = batch.separate();
    let mut out = LabeledGraphs { graphs, labels: vec![], masks: vec![] };
    for &i in &batch_report.kept {
        out.labels.push(rows[i].labels.clone());
        out.masks.push(rows[i].mask.clone());
    }
    Ok(out)
}

fn subset(data: &LabeledGraphs, indices: &[usize]) -> LabeledGraphs {
    LabeledGraphs {
        graphs: indices.iter().map(|&i| data.graphs[i].clone()).collect(),
        labels: indices.iter().map(|&i| data.labels[i].clone()).collect(),
        masks: indices.iter().map(|&i| data.masks[i].clone()).collect(),
    }
}

fn evaluate_metrics(
    model: &GnnModel,
    data: &LabeledGraphs,
) -> Result<BTreeMap<String, f64>, CliError> {
    let mut preds = Vec::with_capacity(data.graphs.len());
    for g in &data.graphs {
        let p = model.predict(g).map_err(run_err)?;
        preds.push(p.data().to_vec());
    }
    let pred = crate::Tensor::from_rows(&preds);
    let target = crate::Tensor::from_rows(&data.labels);
    let mask = crate::Tensor::from_rows(&data.masks);
    let mut out = BTreeMap::new();
    let loss_kind = match model.task {
        Task::Regression { .. } => train::LossKind::MseRmse,
        Task::BinaryClassification { .. } => train::LossKind::Bce,
    };
    out.insert("loss".to_string(), evaluate_loss(model, data, loss_kind).map_err(run_err)?);
    let kinds: &[(&str, MetricKind)] = match model.task {
        Task::Regression { .. } => {
            &[("rmse", MetricKind::Rmse), ("mae", MetricKind::Mae), ("mre", MetricKind::Mre)]
        }
        Task::BinaryClassification { .. } => {
            &[("roc_auc", MetricKind::RocAuc), ("prc_auc", MetricKind::PrcAuc)]
        }
    };
    for (name, kind) in kinds {
        let r = metric(*kind, &pred, &target, &mask).map_err(run_err)?;
        out.insert((*name).to_string(), r.value);
    }
    Ok(out)
}

fn read_residuals(path: &Path, z: f64) -> Result<rtfilter::RtFilterCalibration, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(run_err)?;
    let headers = reader.headers().map_err(run_err)?.clone();
    let idx = headers
        .iter()
        .position(|h| h == "residual")
        .ok_or_else(|| CliError::Run("residuals CSV needs a 'residual' column".into()))?;
    let mut residuals = Vec::new();
    for record in reader.records() {
        let record = record.map_err(run_err)?;
        let v: f64 = record
            .get(idx)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| CliError::Run("unparseable residual".into()))?;
        residuals.push(v);
    }
    rtfilter::calibrate(&residuals, z).map_err(run_err)
}

/// Candidates CSV: analyte_id, analyte_rt, candidate_smiles, external_score,
/// predicted_rt. Returns verdicts grouped per analyte in file order.
fn read_candidates(
    path: &Path,
    calib: &rtfilter::RtFilterCalibration,
) -> Result<Vec<(String, Vec<rtfilter::CandidateVerdict>)>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(run_err)?;
    let headers = reader.headers().map_err(run_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Run(format!("candidates CSV needs a {name:?} column")))
    };
    let (ai, ri, si, xi, pi) = (
        col("analyte_id")?,
        col("analyte_rt")?,
        col("candidate_smiles")?,
        col("external_score")?,
        col("predicted_rt")?,
    );
    let mut grouped: Vec<(String, f64, Vec<(String, f64, f64)>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(run_err)?;
        let get = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let parse = |i: usize| -> Result<f64, CliError> {
            get(i).parse().map_err(|_| CliError::Run(format!("unparseable number {:?}", get(i))))
        };
        let id = get(ai);
        let rt = parse(ri)?;
        let entry = (get(si), parse(xi)?, parse(pi)?);
        match grouped.last_mut() {
            Some((last_id, _, list)) if *last_id == id => list.push(entry),
            _ => grouped.push((id, rt, vec![entry])),
        }
    }
    Ok(grouped
        .into_iter()
        .map(|(id, rt, candidates)| (id, rtfilter::apply_filter(calib, rt, &candidates)))
        .collect())
}

#[cfg(test)]
mod tests;
