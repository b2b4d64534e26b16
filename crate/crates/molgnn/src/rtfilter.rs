//! Retention-time candidate filtering: calibrate residual bounds on a
//! validation set, then keep or discard proposed candidate structures by
//! how far their predicted retention time sits from the measured analyte.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RtFilterError {
    #[error("calibration needs at least 2 residuals, got {0}")]
    TooFewResiduals(usize),
}

/// Residual convention throughout: experimental − predicted, in minutes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtFilterCalibration {
    pub mu: f64,
    pub sigma: f64,
    pub z: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Population (not sample) standard deviation; bounds are `mu ± z·sigma`.
pub fn calibrate(residuals: &[f64], z: f64) -> Result<RtFilterCalibration, RtFilterError> {
    if residuals.len() < 2 {
        return Err(RtFilterError::TooFewResiduals(residuals.len()));
    }
    let n = residuals.len() as f64;
    let mu = residuals.iter().sum::<f64>() / n;
    let sigma = (residuals.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RtFilterCalibration { mu, sigma, z, lower: mu - z * sigma, upper: mu + z * sigma })
}

impl RtFilterCalibration {
    /// A calibration from externally supplied bounds, for replaying published
    /// filters whose validation residuals are unavailable.
    pub fn from_bounds(lower: f64, upper: f64) -> Self {
        let mu = (lower + upper) / 2.0;
        RtFilterCalibration { mu, sigma: f64::NAN, z: f64::NAN, lower, upper }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateVerdict {
    pub candidate_smiles: String,
    /// Upstream structure-elucidation score; ranking only, never the verdict.
    pub external_score: f64,
    pub predicted_rt: f64,
    /// analyte_rt − predicted_rt, minutes.
    pub rt_difference: f64,
    pub filtered_out: bool,
}

/// One verdict per candidate `(smiles, external_score, predicted_rt)`,
/// ranked by external score descending (survivors and discards alike, so
/// row order matches the upstream candidate ranking). Differences exactly
/// at a bound are kept.
pub fn apply_filter(
    calib: &RtFilterCalibration,
    analyte_rt: f64,
    candidates: &[(String, f64, f64)],
) -> Vec<CandidateVerdict> {
    let mut verdicts: Vec<CandidateVerdict> = candidates
        .iter()
        .map(|(smiles, score, predicted)| {
            let diff = analyte_rt - predicted;
            CandidateVerdict {
                candidate_smiles: smiles.clone(),
                external_score: *score,
                predicted_rt: *predicted,
                rt_difference: diff,
                filtered_out: diff < calib.lower || diff > calib.upper,
            }
        })
        .collect();
    verdicts
        .sort_by(|a, b| b.external_score.partial_cmp(&a.external_score).unwrap());
    verdicts
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyteSummary {
    pub total: usize,
    pub filtered: usize,
    pub kept: usize,
    /// Set when a supplied ground-truth identity was itself filtered out.
    pub false_negative: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub analytes: Vec<AnalyteSummary>,
    pub overall_filtered_fraction: f64,
}

/// Summarizes verdicts across analytes. `ground_truth[i]`, when present, is
/// the known identity of analyte `i`; if that structure was filtered out it
/// is flagged as a false negative.
pub fn filter_report(
    verdicts_per_analyte: &[Vec<CandidateVerdict>],
    ground_truth: &[Option<&str>],
) -> FilterReport {
    let mut analytes = Vec::with_capacity(verdicts_per_analyte.len());
    let mut total = 0usize;
    let mut filtered_total = 0usize;
    for (i, verdicts) in verdicts_per_analyte.iter().enumerate() {
        let filtered = verdicts.iter().filter(|v| v.filtered_out).count();
        let truth = ground_truth.get(i).copied().flatten();
        let false_negative = truth.and_then(|t| {
            verdicts
                .iter()
                .find(|v| v.filtered_out && v.candidate_smiles == t)
                .map(|v| v.candidate_smiles.clone())
        });
        total += verdicts.len();
        filtered_total += filtered;
        analytes.push(AnalyteSummary {
            total: verdicts.len(),
            filtered,
            kept: verdicts.len() - filtered,
            false_negative,
        });
    }
    let overall_filtered_fraction =
        if total == 0 { 0.0 } else { filtered_total as f64 / total as f64 };
    FilterReport { analytes, overall_filtered_fraction }
}
