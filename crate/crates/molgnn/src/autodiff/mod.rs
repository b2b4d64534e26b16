//! Tape-based reverse-mode differentiation over dense f64 tensors.

mod tape;
mod tensor;

pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered")]
    NonFiniteValue,
    #[error("output is not recorded on the tape")]
    DisconnectedOutput,
}

/// Outcome of comparing tape gradients to central finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tol: f64,
    /// Sample points skipped because the function is locally non-smooth
    /// (forward values straddle a kink within epsilon).
    pub skipped: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Compare the tape gradient of a scalar function against central finite
/// differences, perturbing every element of every input.
///
/// `f` rebuilds the computation from fresh input nodes each call, so the
/// tape path and the numeric path stay independent.
pub fn grad_check(
    f: impl Fn(&mut Tape, &[NodeId]) -> NodeId,
    inputs: &[Tensor],
    eps: f64,
    tol: f64,
) -> GradCheckReport {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.input(t.clone(), true)).collect();
    let out = f(&mut tape, &ids);
    let grads = tape.backward(out).expect("grad_check output must be scalar");

    let eval = |xs: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| t.input(x.clone(), true)).collect();
        let o = f(&mut t, &ids);
        t.value(o).item()
    };

    let mut max_rel = 0.0f64;
    let mut skipped = 0;
    let mut checked = 0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[k], input);
        for e in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic.data()[e];
            if !numeric.is_finite() {
                skipped += 1;
                continue;
            }
            let denom = a.abs().max(numeric.abs());
            // Central differences carry round-off noise of roughly
            // machine-eps * |f| / eps in absolute terms, so tiny gradients
            // cannot be compared relatively; fall back to an absolute check.
            let rel = if denom < 1e-4 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / denom
            };
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    GradCheckReport { max_rel_error: max_rel, tol, skipped, checked }
}
