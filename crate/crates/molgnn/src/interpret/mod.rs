//! Per-atom attribution: input-gradient saliency, gradient-activation
//! mapping over a chosen graph layer, and a deterministic SVG depiction.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::chem::Molecule;
use crate::graph::GraphTensor;
use crate::layers::{GnnModel, LayerError};
use crate::Tape;

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("model has {0} outputs; attribution needs a target index for multi-output models")]
    MultiOutputUnsupported(usize),
    #[error("layer index {index} is not a graph layer (model has {available})")]
    BadLayerIndex { index: usize, available: usize },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributionKind {
    Saliency,
    Gradcam,
}

/// Per-atom contribution scores for one molecule's prediction.
#[derive(Debug, Clone)]
pub struct AttributionMap {
    pub smiles: String,
    pub scores: Vec<f64>,
    pub kind: AttributionKind,
    pub prediction: f64,
}

fn single_output_pass(
    model: &GnnModel,
    g: &GraphTensor,
) -> Result<(Tape, crate::layers::ForwardPass, f64), InterpretError> {
    let outputs = model.task.outputs();
    if outputs != 1 {
        return Err(InterpretError::MultiOutputUnsupported(outputs));
    }
    let mut tape = Tape::new();
    let pass = model.forward_on_tape(&mut tape, g, false)?;
    let prediction = tape.value(pass.output).item();
    Ok((tape, pass, prediction))
}

/// Sum of absolute input-feature gradients per atom; always non-negative.
pub fn saliency(model: &GnnModel, g: &GraphTensor, smiles: &str) -> Result<AttributionMap, InterpretError> {
    let (tape, pass, prediction) = single_output_pass(model, g)?;
    let grads = tape.backward(pass.output)?;
    let gx = grads.get_or_zeros(pass.node_input, &g.node_feature);
    let d = gx.cols();
    let scores = (0..g.num_nodes())
        .map(|i| gx.data()[i * d..(i + 1) * d].iter().map(|v| v.abs()).sum())
        .collect();
    Ok(AttributionMap {
        smiles: smiles.to_string(),
        scores,
        kind: AttributionKind::Saliency,
        prediction,
    })
}

/// Gradient-activation map over the `layer_index`-th graph layer's
/// embeddings: channel weights are node-averaged gradients, and each atom's
/// score is the weighted sum of its embedding. Signed, so negative
/// contributions survive.
pub fn gradcam(
    model: &GnnModel,
    g: &GraphTensor,
    smiles: &str,
    layer_index: usize,
) -> Result<AttributionMap, InterpretError> {
    let (tape, pass, prediction) = single_output_pass(model, g)?;
    if layer_index >= pass.node_states.len() {
        return Err(InterpretError::BadLayerIndex {
            index: layer_index,
            available: pass.node_states.len(),
        });
    }
    let state = pass.node_states[layer_index];
    let h = tape.value(state).clone();
    let grads = tape.backward(pass.output)?;
    let gh = grads.get_or_zeros(state, &h);
    let (n, d) = (h.rows(), h.cols());
    let mut alpha = vec![0.0; d];
    for i in 0..n {
        for (j, a) in alpha.iter_mut().enumerate() {
            *a += gh.data()[i * d + j] / n as f64;
        }
    }
    let scores = (0..n)
        .map(|i| (0..d).map(|j| alpha[j] * h.data()[i * d + j]).sum())
        .collect();
    Ok(AttributionMap {
        smiles: smiles.to_string(),
        scores,
        kind: AttributionKind::Gradcam,
        prediction,
    })
}

/// Gradcam over the last graph layer, the default inspection point.
pub fn gradcam_last(
    model: &GnnModel,
    g: &GraphTensor,
    smiles: &str,
) -> Result<AttributionMap, InterpretError> {
    let graph_layers = model.layers.iter().filter(|l| l.kind.is_graph()).count();
    gradcam(model, g, smiles, graph_layers.saturating_sub(1))
}

// ---------------------------------------------------------------------------
// 2D layout and SVG rendering
// ---------------------------------------------------------------------------

/// Force-directed 2D coordinates: springs along bonds, inverse-square
/// repulsion between all atom pairs. Deterministic for a fixed seed.
pub fn layout_2d(mol: &Molecule, seed: u64) -> Vec<(f64, f64)> {
    let n = mol.num_atoms();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pos: Vec<(f64, f64)> =
        (0..n).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let bond_len = 1.0;
    for step in 0..400 {
        let cooling = 0.05 * (1.0 - step as f64 / 400.0) + 0.005;
        let mut force = vec![(0.0, 0.0); n];
        for i in 0..n {
            for j in i + 1..n {
                let dx = pos[i].0 - pos[j].0;
                let dy = pos[i].1 - pos[j].1;
                let d2 = (dx * dx + dy * dy).max(1e-6);
                let f = 0.4 / d2;
                let d = d2.sqrt();
                force[i].0 += f * dx / d;
                force[i].1 += f * dy / d;
                force[j].0 -= f * dx / d;
                force[j].1 -= f * dy / d;
            }
        }
        for b in &mol.bonds {
            let dx = pos[b.src].0 - pos[b.dst].0;
            let dy = pos[b.src].1 - pos[b.dst].1;
            let d = (dx * dx + dy * dy).sqrt().max(1e-6);
            let f = d - bond_len;
            force[b.src].0 -= f * dx / d;
            force[b.src].1 -= f * dy / d;
            force[b.dst].0 += f * dx / d;
            force[b.dst].1 += f * dy / d;
        }
        for i in 0..n {
            pos[i].0 += cooling * force[i].0;
            pos[i].1 += cooling * force[i].1;
        }
    }
    pos
}

fn diverging_color(score: f64, max_abs: f64) -> String {
    // Positive scores shade green, negative purple, zero stays white.
    if max_abs == 0.0 {
        return "#ffffff".to_string();
    }
    let t = (score / max_abs).clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        let s = 1.0 - t;
        (s * 255.0, 255.0 - t * 100.0, s * 255.0)
    } else {
        let s = 1.0 + t;
        (255.0 + t * 120.0, s * 255.0, 255.0 + t * 60.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Renders the molecule with per-atom fills from a diverging color scale.
/// Output is deterministic for a fixed seed.
pub fn render_svg(mol: &Molecule, map: &AttributionMap, seed: u64) -> String {
    let pos = layout_2d(mol, seed);
    let n = mol.num_atoms();
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in &pos {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    if n == 0 || !min_x.is_finite() {
        (min_x, min_y, max_x, max_y) = (0.0, 0.0, 1.0, 1.0);
    }
    let scale = 60.0;
    let pad = 40.0;
    let w = (max_x - min_x) * scale + 2.0 * pad;
    let h = (max_y - min_y) * scale + 2.0 * pad + 30.0;
    let px = |x: f64| (x - min_x) * scale + pad;
    let py = |y: f64| (y - min_y) * scale + pad;
    let max_abs = map.scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.1}\" height=\"{h:.1}\" viewBox=\"0 0 {w:.1} {h:.1}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for b in &mol.bonds {
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#444444\" stroke-width=\"2\"/>",
            px(pos[b.src].0),
            py(pos[b.src].1),
            px(pos[b.dst].0),
            py(pos[b.dst].1)
        );
    }
    for (i, atom) in mol.atoms.iter().enumerate() {
        let fill = diverging_color(map.scores.get(i).copied().unwrap_or(0.0), max_abs);
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"12\" fill=\"{fill}\" stroke=\"#222222\"/>",
            px(pos[i].0),
            py(pos[i].1)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\" dominant-baseline=\"central\">{}</text>",
            px(pos[i].0),
            py(pos[i].1),
            atom.element.symbol()
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{pad:.1}\" y=\"{:.1}\" font-size=\"11\">max |score| = {max_abs:.4} (green positive, purple negative)</text>",
        h - 12.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// CSV export: one row per atom with element symbol and score.
pub fn write_scores_csv(path: &Path, mol: &Molecule, map: &AttributionMap) -> Result<(), InterpretError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => InterpretError::Io(io),
        other => InterpretError::Io(std::io::Error::other(format!("{other:?}"))),
    })?;
    w.write_record(["atom", "element", "score"]).map_err(csv_io)?;
    for (i, atom) in mol.atoms.iter().enumerate() {
        w.write_record([
            i.to_string(),
            atom.element.symbol().to_string(),
            format!("{}", map.scores[i]),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> InterpretError {
    InterpretError::Io(std::io::Error::other(e.to_string()))
}
