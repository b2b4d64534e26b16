//! Evaluation metrics over masked multi-task prediction matrices.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Rmse,
    Mae,
    Mre,
    RocAuc,
    PrcAuc,
}

/// Metric value averaged over task columns; columns that could not be
/// scored (single-class for the AUCs) are listed, not averaged.
#[derive(Debug, Clone)]
pub struct MetricResult {
    pub value: f64,
    pub skipped_tasks: Vec<usize>,
}

/// Denominator floor for mean relative error near zero targets.
const MRE_EPS: f64 = 1e-8;

/// Compute `kind` over predictions/targets (n x k) with a 0/1 mask.
pub fn metric(
    kind: MetricKind,
    preds: &Tensor,
    targets: &Tensor,
    mask: &Tensor,
) -> Result<MetricResult, TrainError> {
    assert_eq!(preds.shape(), targets.shape(), "metric shape mismatch");
    assert_eq!(preds.shape(), mask.shape(), "metric mask mismatch");
    let (n, k) = (preds.rows(), preds.cols());
    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for c in 0..k {
        let mut p = Vec::new();
        let mut t = Vec::new();
        for r in 0..n {
            if mask.at(r, c) != 0.0 {
                p.push(preds.at(r, c));
                t.push(targets.at(r, c));
            }
        }
        if p.is_empty() {
            skipped.push(c);
            continue;
        }
        let value = match kind {
            MetricKind::Rmse => {
                let mse: f64 =
                    p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
                Some(mse.sqrt())
            }
            MetricKind::Mae => {
                Some(p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
            }
            MetricKind::Mre => Some(
                p.iter()
                    .zip(&t)
                    .map(|(a, b)| (a - b).abs() / b.abs().max(MRE_EPS))
                    .sum::<f64>()
                    / p.len() as f64,
            ),
            MetricKind::RocAuc => roc_auc(&p, &t),
            MetricKind::PrcAuc => average_precision(&p, &t),
        };
        match value {
            Some(v) => values.push(v),
            None => skipped.push(c),
        }
    }
    if values.is_empty() {
        return Err(if skipped.is_empty() {
            TrainError::EmptyMask
        } else {
            TrainError::SingleClassTask
        });
    }
    Ok(MetricResult {
        value: values.iter().sum::<f64>() / values.len() as f64,
        skipped_tasks: skipped,
    })
}

/// Midranks: average rank (1-based) for tied values.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// ROC-AUC via the rank statistic; None if a class is missing.
pub fn roc_auc(preds: &[f64], targets: &[f64]) -> Option<f64> {
    let pos = targets.iter().filter(|&&t| t > 0.5).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let ranks = midranks(preds);
    let rank_sum: f64 = ranks
        .iter()
        .zip(targets)
        .filter(|(_, &t)| t > 0.5)
        .map(|(r, _)| r)
        .sum();
    Some((rank_sum - pos as f64 * (pos as f64 + 1.0) / 2.0) / (pos as f64 * neg as f64))
}

/// Average precision (area under the precision-recall curve); ties broken
/// by input order after a stable descending sort.
pub fn average_precision(preds: &[f64], targets: &[f64]) -> Option<f64> {
    let pos = targets.iter().filter(|&&t| t > 0.5).count();
    if pos == 0 || pos == targets.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].partial_cmp(&preds[a]).unwrap());
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        if targets[idx] > 0.5 {
            hits += 1;
            ap += hits as f64 / (k + 1) as f64;
        }
    }
    Some(ap / pos as f64)
}
