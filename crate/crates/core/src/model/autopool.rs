//! Adaptive pooling of instance probabilities into a bag probability.
//!
//! For one class with masked-in instance probabilities `p_i`,
//!
//! ```text
//! P = sum_i p_i * w_i,   w_i = exp(alpha * p_i) / sum_j exp(alpha * p_j)
//! ```
//!
//! `alpha = 0` is the plain mean, `alpha = 1` soft-max weighting and
//! `alpha -> inf` approaches the max. Masked-out instances are left out of
//! both the sum and the normaliser, so zero padding has no effect at all.
//! Probabilities are pooled directly (not logits).

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Pooled value and the softmax weights of one class column.
fn pool_column(column: impl Iterator<Item = f64> + Clone, alpha: f64) -> (f64, Vec<f64>) {
    let max = column
        .clone()
        .map(|p| alpha * p)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = column.clone().map(|p| (alpha * p - max).exp()).collect();
    let norm: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= norm;
    }
    let pooled = column.zip(&weights).map(|(p, w)| p * w).sum();
    (pooled, weights)
}

fn check(probs: &ArrayView2<f64>, mask: &[bool]) -> Result<()> {
    if probs.nrows() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} instance rows but mask of length {}",
            probs.nrows(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked);
    }
    Ok(())
}

/// Pools `probs` (`[n_instances, C]`) over masked-in rows, per class.
pub fn autopool(probs: ArrayView2<f64>, mask: &[bool], alpha: f64) -> Result<Array1<f64>> {
    check(&probs, mask)?;
    Ok(probs
        .axis_iter(Axis(1))
        .map(|col| {
            let live = col.iter().zip(mask).filter(|(_, &m)| m).map(|(&p, _)| p);
            pool_column(live, alpha).0
        })
        .collect())
}

/// Forward values plus the pieces needed for backpropagation.
#[derive(Clone, Debug)]
pub struct PoolTrace {
    pub pooled: Array1<f64>,
    /// `[n_instances, C]` softmax weights; zero on masked-out rows.
    pub weights: Array2<f64>,
}

pub fn autopool_trace(probs: ArrayView2<f64>, mask: &[bool], alpha: f64) -> Result<PoolTrace> {
    check(&probs, mask)?;
    let (n, c) = probs.dim();
    let live_rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let mut weights = Array2::zeros((n, c));
    let mut pooled = Array1::zeros(c);
    for j in 0..c {
        let col = live_rows.iter().map(|&i| probs[[i, j]]);
        let (value, w) = pool_column(col, alpha);
        pooled[j] = value;
        for (&i, wi) in live_rows.iter().zip(w) {
            weights[[i, j]] = wi;
        }
    }
    Ok(PoolTrace { pooled, weights })
}

/// Given `dL/dP` per class, returns `dL/dp` per instance and class, and
/// `dL/dalpha`.
///
/// `dP/dp_i = w_i * (1 + alpha * (p_i - P))` and
/// `dP/dalpha = sum_i w_i * p_i * (p_i - P)`.
pub fn autopool_backward(
    probs: ArrayView2<f64>,
    trace: &PoolTrace,
    alpha: f64,
    d_pooled: &Array1<f64>,
) -> (Array2<f64>, f64) {
    let (n, c) = probs.dim();
    let mut d_probs = Array2::zeros((n, c));
    let mut d_alpha = 0.0;
    for j in 0..c {
        let big_p = trace.pooled[j];
        let mut dp_dalpha = 0.0;
        for i in 0..n {
            let w = trace.weights[[i, j]];
            if w == 0.0 {
                continue;
            }
            let p = probs[[i, j]];
            d_probs[[i, j]] = d_pooled[j] * w * (1.0 + alpha * (p - big_p));
            dp_dalpha += w * p * (p - big_p);
        }
        d_alpha += d_pooled[j] * dp_dalpha;
    }
    (d_probs, d_alpha)
}
