//! Pearson-correlation filter selection.
//!
//! Features are ranked by |r| against the label on training rows only, and
//! the smallest top-k prefix whose holdout accuracy reaches a fraction of
//! the all-feature accuracy is kept.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{align_to_catalog, BinaryDataset, FeatureCatalog};
use crate::error::{Error, Result};
use crate::learners::{self, LearnerConfig};
use crate::report::float17;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// One of the inputs is constant; `r` is reported as 0.
    pub degenerate: bool,
}

/// Sample Pearson correlation, computed in two passes (means, then
/// centered cross- and auto-moments).
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples {
            have: x.len(),
            need: 2,
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation {
            r: 0.0,
            degenerate: true,
        });
    }
    // sqrt of the product, not the product of square roots, so that
    // identical inputs give exactly 1.
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation {
        r,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    #[serde(with = "float17")]
    pub r: f64,
    #[serde(with = "float17")]
    pub abs_r: f64,
    pub degenerate: bool,
}

/// Every catalog feature once, by |r| descending, ties by name ascending,
/// constant features last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRanking {
    pub entries: Vec<RankedFeature>,
    pub n: usize,
}

impl CorrelationRanking {
    pub fn top_names(&self, k: usize) -> impl Iterator<Item = &str> {
        self.entries.iter().take(k).map(|e| e.name.as_str())
    }
}

fn ranking_order(a: &RankedFeature, b: &RankedFeature) -> Ordering {
    a.degenerate
        .cmp(&b.degenerate)
        .then(b.abs_r.total_cmp(&a.abs_r))
        .then_with(|| a.name.cmp(&b.name))
}

pub fn rank_features(data: &BinaryDataset) -> Result<CorrelationRanking> {
    if data.n_rows() < 2 {
        return Err(Error::TooFewSamples {
            have: data.n_rows(),
            need: 2,
        });
    }
    let [b, m] = data.class_counts();
    if b == 0 || m == 0 {
        return Err(Error::SingleClassDataset);
    }
    let y: Vec<f64> = data.labels().iter().map(|&l| f64::from(l)).collect();
    let mut entries = (0..data.n_features())
        .into_par_iter()
        .map(|f| {
            let x: Vec<f64> = data.rows().map(|r| f64::from(r[f])).collect();
            let c = pearson_r(&x, &y)?;
            Ok(RankedFeature {
                name: data.catalog().name(f).to_owned(),
                r: c.r,
                abs_r: c.r.abs(),
                degenerate: c.degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(ranking_order);
    Ok(CorrelationRanking {
        entries,
        n: data.n_rows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: usize,
    #[serde(with = "float17")]
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub k: usize,
    /// The top-k ranked features, listed in the source catalog's order.
    pub selected: FeatureCatalog,
    #[serde(with = "float17")]
    pub threshold: f64,
    #[serde(with = "float17")]
    pub full_feature_accuracy: f64,
    #[serde(with = "float17")]
    pub achieved_accuracy: f64,
    pub trace: Vec<TraceEntry>,
    pub ranking: CorrelationRanking,
}

/// Top-k names of `ranking`, restricted to and ordered like `catalog`.
pub fn top_k_catalog(catalog: &FeatureCatalog, ranking: &CorrelationRanking, k: usize) -> Result<FeatureCatalog> {
    let keep: std::collections::HashSet<&str> = ranking.top_names(k).collect();
    FeatureCatalog::new(
        catalog
            .names()
            .iter()
            .filter(|n| keep.contains(n.as_str()))
            .cloned(),
    )
}

/// Holdout accuracy of `trainer` retrained on `catalog`.
pub fn holdout_accuracy(
    train: &BinaryDataset,
    holdout: &BinaryDataset,
    catalog: &FeatureCatalog,
    trainer: &LearnerConfig,
) -> Result<f64> {
    let tr = align_to_catalog(train, catalog);
    let ho = align_to_catalog(holdout, catalog);
    let model = learners::train(&tr, trainer)?;
    let correct = ho
        .rows()
        .zip(ho.labels())
        .filter(|(row, &y)| {
            let p = model.to_probability(model.raw_output_unchecked(row));
            u8::from(p >= 0.5) == y
        })
        .count();
    Ok(correct as f64 / ho.n_rows() as f64)
}

/// The k values tried, in order: `step, 2*step, ...` and always the full width.
pub fn k_schedule(total: usize, step: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (1..).map(|i| i * step).take_while(|&k| k < total).collect();
    ks.push(total);
    ks
}

/// Smallest scheduled k whose retrained holdout accuracy reaches
/// `threshold * full_feature_accuracy`.
///
/// The k-th candidate keeps the top-k features in catalog order, so the
/// final candidate reproduces the all-feature model exactly and always
/// qualifies when `threshold <= 1`.
pub fn select_minimal_topk(
    train: &BinaryDataset,
    holdout: &BinaryDataset,
    trainer: &LearnerConfig,
    threshold: f64,
    step: usize,
) -> Result<SelectionResult> {
    if step == 0 {
        return Err(Error::InvalidConfig("selection step must be positive".into()));
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidConfig(format!("selection threshold {threshold} must be positive")));
    }
    if train.catalog() != holdout.catalog() {
        return Err(Error::InvalidConfig("train and holdout catalogs differ".into()));
    }
    if holdout.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let catalog = train.catalog();
    let full = holdout_accuracy(train, holdout, catalog, trainer)?;
    let ranking = rank_features(train)?;
    let target = threshold * full;

    let mut trace = Vec::new();
    for k in k_schedule(catalog.len(), step) {
        let accuracy = if k == catalog.len() {
            full
        } else {
            let cat = top_k_catalog(catalog, &ranking, k)?;
            holdout_accuracy(train, holdout, &cat, trainer)?
        };
        trace.push(TraceEntry { k, accuracy });
        if accuracy >= target {
            return Ok(SelectionResult {
                k,
                selected: top_k_catalog(catalog, &ranking, k)?,
                threshold,
                full_feature_accuracy: full,
                achieved_accuracy: accuracy,
                trace,
                ranking,
            });
        }
    }
    Err(Error::Invariant(format!(
        "no k reached {target} (threshold {threshold} above 1?)"
    )))
}
