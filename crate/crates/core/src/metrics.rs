//! Confusion counts, per-class precision/recall/F1, accuracy and ROC AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::float17;

/// Counts with malware (class 1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::TooFewSamples { have: 0, need: 1 });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (1, _) => cm.fp += 1,
            (_, 1) => cm.fn_ += 1,
            _ => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    #[serde(with = "float17")]
    pub precision: f64,
    #[serde(with = "float17")]
    pub recall: f64,
    #[serde(with = "float17")]
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub benign: ClassMetrics,
    pub malware: ClassMetrics,
    #[serde(with = "float17")]
    pub accuracy: f64,
    /// Set when some precision, recall or F1 hit a 0/0 and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(hit: u64, false_pos: u64, false_neg: u64, degenerate: &mut bool) -> ClassMetrics {
    let precision = ratio(hit, hit + false_pos, degenerate);
    let recall = ratio(hit, hit + false_neg, degenerate);
    let f1 = if precision + recall == 0.0 {
        *degenerate = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
    }
}

pub fn classification_report(cm: &ConfusionMatrix) -> ClassificationReport {
    let mut degenerate = false;
    let malware = class_metrics(cm.tp, cm.fp, cm.fn_, &mut degenerate);
    let benign = class_metrics(cm.tn, cm.fn_, cm.fp, &mut degenerate);
    let accuracy = ratio(cm.tp + cm.tn, cm.total(), &mut degenerate);
    ClassificationReport {
        benign,
        malware,
        accuracy,
        degenerate,
    }
}

/// AUC as the exact fraction `numerator / denominator`, where the
/// numerator is twice the Mann-Whitney U of the positives (average ranks
/// for ties) and the denominator is `2 * n_pos * n_neg`.
pub fn roc_auc_fraction(scores: &[f64], labels: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore);
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of the positives; a tie group occupying 1-based
    // ranks lo..=hi gives each member rank (lo + hi) / 2.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        twice_rank_sum += positives * (start as u64 + 1 + end as u64);
        start = end;
    }
    let numerator = twice_rank_sum - n_pos * (n_pos + 1);
    Ok((numerator, 2 * n_pos * n_neg))
}

pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (num, den) = roc_auc_fraction(scores, labels)?;
    Ok(num as f64 / den as f64)
}
