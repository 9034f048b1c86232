//! Recording-level multi-label metrics: macro F1, macro ROC-AUC and
//! class-averaged mean average precision (CMAP).
//!
//! Degenerate classes are left out of the macro averages: F1 and CMAP skip
//! classes without a positive label, ROC-AUC also skips classes without a
//! negative one.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_F1_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalBatch {
    /// `[n, C]` scores in `[0, 1]`.
    pub scores: Array2<f64>,
    /// `[n, C]` binary ground truth.
    pub truth: Array2<f64>,
    pub threshold: f64,
}

impl EvalBatch {
    pub fn new(scores: Array2<f64>, truth: Array2<f64>, threshold: f64) -> Result<Self> {
        if scores.dim() != truth.dim() {
            return Err(Error::ShapeMismatch(format!(
                "scores {:?} vs truth {:?}",
                scores.dim(),
                truth.dim()
            )));
        }
        if truth.iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::InvalidParameter("truth must be binary".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores".into()));
        }
        Ok(Self {
            scores,
            truth,
            threshold,
        })
    }

    fn n_classes(&self) -> usize {
        self.scores.ncols()
    }

    fn column(&self, c: usize) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
        (self.scores.column(c), self.truth.column(c))
    }
}

fn mean(values: &[f64], what: &'static str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::NoIncludableClass(what));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// F1 of one class at `threshold` (score >= threshold counts as positive).
pub fn f1_score(scores: ArrayView1<f64>, truth: ArrayView1<f64>, threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &t) in scores.iter().zip(truth.iter()) {
        match (s >= threshold, t == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

pub fn macro_f1(batch: &EvalBatch) -> Result<f64> {
    if !(batch.threshold > 0.0 && batch.threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "F1 threshold {} outside (0, 1)",
            batch.threshold
        )));
    }
    let per_class: Vec<f64> = (0..batch.n_classes())
        .filter_map(|c| {
            let (s, t) = batch.column(c);
            t.iter()
                .any(|&v| v == 1.0)
                .then(|| f1_score(s, t, batch.threshold))
        })
        .collect();
    mean(&per_class, "macro F1")
}

/// Mann-Whitney AUC of one class, ties counted as one half.
/// `None` when the class lacks positives or negatives.
pub fn roc_auc(scores: ArrayView1<f64>, truth: ArrayView1<f64>) -> Option<f64> {
    let n = scores.len();
    let n_pos = truth.iter().filter(|&&t| t == 1.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // sum of average ranks (1-based) of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| truth[k] == 1.0).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

pub fn macro_roc_auc(batch: &EvalBatch) -> Result<f64> {
    let per_class: Vec<f64> = (0..batch.n_classes())
        .filter_map(|c| {
            let (s, t) = batch.column(c);
            roc_auc(s, t)
        })
        .collect();
    mean(&per_class, "macro ROC-AUC")
}

/// Average precision of one class over the score-descending ranking; equal
/// scores keep their original order. `None` without positives.
pub fn average_precision(scores: ArrayView1<f64>, truth: ArrayView1<f64>) -> Option<f64> {
    let n_pos = truth.iter().filter(|&&t| t == 1.0).count();
    if n_pos == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        if truth[i] == 1.0 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

pub fn cmap(batch: &EvalBatch) -> Result<f64> {
    let per_class: Vec<f64> = (0..batch.n_classes())
        .filter_map(|c| {
            let (s, t) = batch.column(c);
            average_precision(s, t)
        })
        .collect();
    mean(&per_class, "CMAP")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub macro_f1: f64,
    pub macro_roc_auc: f64,
    pub cmap: f64,
}

impl MetricSet {
    pub fn evaluate(batch: &EvalBatch) -> Result<Self> {
        Ok(Self {
            macro_f1: macro_f1(batch)?,
            macro_roc_auc: macro_roc_auc(batch)?,
            cmap: cmap(batch)?,
        })
    }

    pub fn named(&self) -> [(&'static str, f64); 3] {
        [
            ("macro_f1", self.macro_f1),
            ("macro_roc_auc", self.macro_roc_auc),
            ("cmap", self.cmap),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_and_inverted_f1() {
        let truth = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        for th in [0.1, 0.5, 0.9] {
            let b = EvalBatch::new(truth.clone(), truth.clone(), th).unwrap();
            assert_eq!(macro_f1(&b).unwrap(), 1.0);
            let b = EvalBatch::new(truth.mapv(|t| 1.0 - t), truth.clone(), th).unwrap();
            assert_eq!(macro_f1(&b).unwrap(), 0.0);
        }
    }

    #[test]
    fn f1_threshold_must_be_open_interval() {
        let truth = array![[1.0], [0.0]];
        let b = EvalBatch::new(truth.clone(), truth, 1.0).unwrap();
        assert!(macro_f1(&b).is_err());
    }

    #[test]
    fn auc_perfect_and_ties() {
        let b = EvalBatch::new(array![[0.9], [0.8], [0.1]], array![[1.0], [1.0], [0.0]], 0.5).unwrap();
        assert_eq!(macro_roc_auc(&b).unwrap(), 1.0);
        let b = EvalBatch::new(array![[0.4, 0.4], [0.4, 0.4], [0.4, 0.4]], array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], 0.5)
            .unwrap();
        assert_eq!(macro_roc_auc(&b).unwrap(), 0.5);
    }

    #[test]
    fn ap_examples() {
        let b = EvalBatch::new(array![[0.9], [0.8], [0.3], [0.1]], array![[1.0], [1.0], [0.0], [0.0]], 0.5).unwrap();
        assert_eq!(cmap(&b).unwrap(), 1.0);
        let n = 7;
        let scores = Array2::from_shape_fn((n, 1), |(i, _)| 1.0 - i as f64 / n as f64);
        let mut truth = Array2::zeros((n, 1));
        truth[[n - 1, 0]] = 1.0;
        let b = EvalBatch::new(scores, truth, 0.5).unwrap();
        assert!((cmap(&b).unwrap() - 1.0 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn degenerate_classes_are_excluded() {
        // class 1 has no positives, class 2 no negatives
        let scores = array![[0.9, 0.2, 0.6], [0.1, 0.7, 0.4]];
        let truth = array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        let b = EvalBatch::new(scores, truth, 0.5).unwrap();
        assert_eq!(macro_roc_auc(&b).unwrap(), 1.0);
        // F1: class 0 = 1, class 2 = 2*1/(2+0+1) = 2/3
        assert!((macro_f1(&b).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let none = EvalBatch::new(array![[0.5]], array![[0.0]], 0.5).unwrap();
        assert!(matches!(macro_f1(&none), Err(Error::NoIncludableClass(_))));
        assert!(matches!(cmap(&none), Err(Error::NoIncludableClass(_))));
        assert!(matches!(macro_roc_auc(&none), Err(Error::NoIncludableClass(_))));
    }

    #[test]
    fn shape_and_binary_checks() {
        assert!(EvalBatch::new(array![[0.5, 0.5]], array![[1.0]], 0.5).is_err());
        assert!(EvalBatch::new(array![[0.5]], array![[0.5]], 0.5).is_err());
    }
}
