//! Central finite-difference verification of [`head_backward`].
//!
//! [`head_backward`]: crate::head::head_backward

use crate::error::Result;
use crate::head::{head_forward, loss_and_gradient, total_loss_with, HeadParams, LossTargets};
use crate::mask::ScoreMapPair;
use crate::splitter::SplitResult;

/// Finite-difference step used by the CLI and the acceptance suite.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Gradients whose magnitude is below this are compared absolutely: the
/// denominator of the relative error never drops under it.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index (see [`HeadParams::to_flat`]) of the worst parameter.
    pub worst_index: usize,
    pub checked: usize,
}

/// Total loss as a function of the flat parameter vector.
fn loss_at(
    scores: &ScoreMapPair,
    split: &SplitResult,
    targets: &LossTargets,
    template: &mut HeadParams,
    flat: &[f64],
) -> Result<f64> {
    template.copy_from_flat(flat)?;
    let cache = head_forward(scores, split, template)?;
    Ok(total_loss_with(&cache, targets)?.total)
}

/// Compares the analytic gradient with `(L(θ+h) - L(θ-h)) / 2h` for every
/// parameter.
pub fn check_gradient(
    scores: &ScoreMapPair,
    split: &SplitResult,
    targets: &LossTargets,
    params: &HeadParams,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, grad) = loss_and_gradient(scores, split, targets, params)?;
    let analytic = grad.to_flat();
    let mut flat = params.to_flat();
    let mut scratch = params.clone();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: flat.len(),
    };
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + step;
        let plus = loss_at(scores, split, targets, &mut scratch, &flat)?;
        flat[i] = orig - step;
        let minus = loss_at(scores, split, targets, &mut scratch, &flat)?;
        flat[i] = orig;

        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}
