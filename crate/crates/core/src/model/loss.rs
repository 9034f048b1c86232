//! Binary cross-entropy over independent class probabilities.

use ndarray::Array1;

use crate::error::{Error, Result};

/// Predictions are clamped to `[EPS, 1 - EPS]` before the logarithm.
pub const EPS: f64 = 1e-7;

/// `-(1/C) * sum_j [y_j ln p_j + (1 - y_j) ln(1 - p_j)]` for one recording.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::ShapeMismatch("empty prediction vector".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-sum / pred.len() as f64)
}

/// Mean of [`bce_loss`] over recordings.
pub fn batch_bce_loss(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction rows vs {} target rows",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        total += bce_loss(p, t)?;
    }
    Ok(total / preds.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to the unclamped prediction.
/// Zero where the clamp is active.
pub fn bce_grad(pred: &[f64], target: &[f64]) -> Array1<f64> {
    let c = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &y)| {
            if p < EPS || p > 1.0 - EPS {
                0.0
            } else {
                (p - y) / (p * (1.0 - p)) / c
            }
        })
        .collect()
}
