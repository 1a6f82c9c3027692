//! Shapley attributions for tree ensembles under interventional
//! (background-marginal) coalition semantics.
//!
//! The value of a coalition `S` is the model output averaged over background
//! rows `z`, where features in `S` take the explained instance's values and
//! all others take `z`'s. [`shap_exact`] enumerates every coalition;
//! [`shap_tree`] obtains the same numbers per tree and per background row by
//! walking only the paths the instance and the background row can reach.
//!
//! Attributions live in the model's additive space: vote probability for
//! the forest, log-odds margin for the boosted model.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BinaryDataset, FeatureCatalog};
use crate::error::{Error, Result};
use crate::learners::{ModelKind, TreeEnsembleModel, TreeNode};
use crate::report::float17;
use crate::seed;

pub const MAX_EXACT_FEATURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSpace {
    Probability,
    LogOdds,
}

impl OutputSpace {
    /// The space in which a model's trees combine additively.
    pub fn additive_for(model: &TreeEnsembleModel) -> Self {
        match model.kind {
            ModelKind::RandomForest => OutputSpace::Probability,
            ModelKind::Gbdt => OutputSpace::LogOdds,
        }
    }
}

fn output_in(model: &TreeEnsembleModel, x: &[u8], space: OutputSpace) -> f64 {
    let raw = model.raw_output_unchecked(x);
    match space {
        OutputSpace::Probability => model.to_probability(raw),
        OutputSpace::LogOdds => match model.kind {
            ModelKind::Gbdt => raw,
            ModelKind::RandomForest => {
                let p = raw.clamp(1e-15, 1.0 - 1e-15);
                (p / (1.0 - p)).ln()
            }
        },
    }
}

/// Reference rows that stand in for absent features.
#[derive(Debug, Clone)]
pub struct BackgroundSet {
    rows: BinaryDataset,
    sampling_seed: u64,
}

impl BackgroundSet {
    pub fn from_dataset(rows: BinaryDataset) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(BackgroundSet {
            rows,
            sampling_seed: 0,
        })
    }

    /// `size` rows drawn without replacement (all rows if `size` exceeds them).
    pub fn sample(data: &BinaryDataset, size: usize, seed: u64) -> Result<Self> {
        if data.is_empty() || size == 0 {
            return Err(Error::EmptyDataset);
        }
        let rows = if size >= data.n_rows() {
            data.clone()
        } else {
            let mut picked = index::sample(&mut seed::stream(seed, "background", 0), data.n_rows(), size).into_vec();
            picked.sort_unstable();
            data.subset(&picked)
        };
        Ok(BackgroundSet {
            rows,
            sampling_seed: seed,
        })
    }

    pub fn rows(&self) -> &BinaryDataset {
        &self.rows
    }

    pub fn size(&self) -> usize {
        self.rows.n_rows()
    }

    pub fn sampling_seed(&self) -> u64 {
        self.sampling_seed
    }

    fn check(&self, model: &TreeEnsembleModel) -> Result<()> {
        if self.rows.catalog() != &model.catalog {
            return Err(Error::WidthMismatch {
                expected: model.width(),
                got: self.rows.n_features(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapAttribution {
    pub phi: Vec<f64>,
    /// Mean model output over the background, in `space`.
    pub base_value: f64,
    /// Model output for the instance, in `space`.
    pub fx: f64,
    pub space: OutputSpace,
    pub base_probability: f64,
    pub fx_probability: f64,
    pub instance_id: Option<u64>,
    pub model_id: Option<String>,
}

impl ShapAttribution {
    pub fn with_ids(mut self, instance_id: Option<u64>, model_id: Option<&str>) -> Self {
        self.instance_id = instance_id;
        self.model_id = model_id.map(str::to_owned);
        self
    }

    /// `|base + sum(phi) - fx|`.
    pub fn additivity_gap(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.fx).abs()
    }
}

fn check_instance(model: &TreeEnsembleModel, instance: &[u8]) -> Result<()> {
    if instance.len() != model.width() {
        return Err(Error::WidthMismatch {
            expected: model.width(),
            got: instance.len(),
        });
    }
    Ok(())
}

/// Coalition value in an explicit output space.
pub fn coalition_value_in(
    model: &TreeEnsembleModel,
    instance: &[u8],
    subset: &[usize],
    background: &BackgroundSet,
    space: OutputSpace,
) -> Result<f64> {
    check_instance(model, instance)?;
    background.check(model)?;
    let mut in_s = vec![false; model.width()];
    for &i in subset {
        *in_s.get_mut(i).ok_or(Error::WidthMismatch {
            expected: model.width(),
            got: i + 1,
        })? = true;
    }
    Ok(masked_value(model, instance, &in_s, background, space))
}

/// Coalition value as a probability: features in `subset` come from the
/// instance, the rest from each background row, averaged over the rows.
pub fn coalition_value(
    model: &TreeEnsembleModel,
    instance: &[u8],
    subset: &[usize],
    background: &BackgroundSet,
) -> Result<f64> {
    coalition_value_in(model, instance, subset, background, OutputSpace::Probability)
}

fn masked_value(
    model: &TreeEnsembleModel,
    instance: &[u8],
    in_s: &[bool],
    background: &BackgroundSet,
    space: OutputSpace,
) -> f64 {
    let mut composite = vec![0u8; instance.len()];
    let mut total = 0.0;
    for z in background.rows.rows() {
        for (j, c) in composite.iter_mut().enumerate() {
            *c = if in_s[j] { instance[j] } else { z[j] };
        }
        total += output_in(model, &composite, space);
    }
    total / background.size() as f64
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 1..=k {
        c = c * (n - k + i) as f64 / i as f64;
    }
    c
}

fn finish(
    model: &TreeEnsembleModel,
    instance: &[u8],
    background: &BackgroundSet,
    phi: Vec<f64>,
) -> ShapAttribution {
    let space = OutputSpace::additive_for(model);
    let n = background.size() as f64;
    let (mut base, mut base_p) = (0.0, 0.0);
    for z in background.rows.rows() {
        let raw = model.raw_output_unchecked(z);
        base += raw;
        base_p += model.to_probability(raw);
    }
    let fx = model.raw_output_unchecked(instance);
    ShapAttribution {
        phi,
        base_value: base / n,
        fx,
        space,
        base_probability: base_p / n,
        fx_probability: model.to_probability(fx),
        instance_id: None,
        model_id: None,
    }
}

/// Shapley values by enumerating all `2^|F|` coalitions.
pub fn shap_exact(model: &TreeEnsembleModel, instance: &[u8], background: &BackgroundSet) -> Result<ShapAttribution> {
    check_instance(model, instance)?;
    background.check(model)?;
    let p = model.width();
    if p > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeaturesForExact {
            max: MAX_EXACT_FEATURES,
            got: p,
        });
    }
    let space = OutputSpace::additive_for(model);
    let values: Vec<f64> = (0..1usize << p)
        .into_par_iter()
        .map(|mask| {
            let in_s: Vec<bool> = (0..p).map(|j| mask >> j & 1 == 1).collect();
            masked_value(model, instance, &in_s, background, space)
        })
        .collect();
    // |S|! (p - |S| - 1)! / p!  ==  1 / (p * C(p - 1, |S|))
    let weights: Vec<f64> = (0..p).map(|s| 1.0 / (p as f64 * binomial(p - 1, s))).collect();
    let mut phi = vec![0.0; p];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in (0..1usize << p).filter(|m| m & bit == 0) {
            *phi_i += weights[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
        }
    }
    Ok(finish(model, instance, background, phi))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Control {
    Free,
    Instance,
    Background,
}

struct PathWalker<'a> {
    x: &'a [u8],
    z: &'a [u8],
    control: Vec<Control>,
    from_x: Vec<usize>,
    from_z: Vec<usize>,
    scale: f64,
}

impl PathWalker<'_> {
    /// A leaf reached when exactly the features in `from_x` follow the
    /// instance and those in `from_z` follow the background row. Its
    /// indicator game gives `(a-1)! b! / (a+b)!` to each of the `a`
    /// instance-side features and `-a! (b-1)! / (a+b)!` to each of the `b`
    /// background-side features.
    fn leaf(&self, value: f64, phi: &mut [f64]) {
        let (a, b) = (self.from_x.len(), self.from_z.len());
        let v = value * self.scale;
        if a > 0 {
            let w = v / (a as f64 * binomial(a + b, a));
            for &i in &self.from_x {
                phi[i] += w;
            }
        }
        if b > 0 {
            let w = v / (b as f64 * binomial(a + b, b));
            for &j in &self.from_z {
                phi[j] -= w;
            }
        }
    }

    fn walk(&mut self, node: &TreeNode, phi: &mut [f64]) {
        match node {
            TreeNode::Leaf { value } => self.leaf(*value, phi),
            TreeNode::Internal {
                feature,
                left,
                right,
            } => {
                let f = *feature;
                let child = |bit: u8| if bit == 0 { left.as_ref() } else { right.as_ref() };
                match self.control[f] {
                    Control::Instance => self.walk(child(self.x[f]), phi),
                    Control::Background => self.walk(child(self.z[f]), phi),
                    Control::Free if self.x[f] == self.z[f] => self.walk(child(self.x[f]), phi),
                    Control::Free => {
                        self.control[f] = Control::Instance;
                        self.from_x.push(f);
                        self.walk(child(self.x[f]), phi);
                        self.from_x.pop();
                        self.control[f] = Control::Background;
                        self.from_z.push(f);
                        self.walk(child(self.z[f]), phi);
                        self.from_z.pop();
                        self.control[f] = Control::Free;
                    }
                }
            }
        }
    }
}

fn tree_phi(model: &TreeEnsembleModel, instance: &[u8], background: &BackgroundSet) -> Vec<f64> {
    let width = model.width();
    let mut phi = vec![0.0; width];
    let tree_weight = match model.kind {
        ModelKind::RandomForest => 1.0 / model.trees.len() as f64,
        ModelKind::Gbdt => 1.0,
    };
    let scale = tree_weight / background.size() as f64;
    let mut control = vec![Control::Free; width];
    for z in background.rows.rows() {
        let mut walker = PathWalker {
            x: instance,
            z,
            control: std::mem::take(&mut control),
            from_x: Vec::new(),
            from_z: Vec::new(),
            scale,
        };
        for tree in &model.trees {
            walker.walk(tree, &mut phi);
        }
        control = walker.control;
    }
    phi
}

/// Polynomial-time interventional Shapley values; agrees with
/// [`shap_exact`] for the same background.
pub fn shap_tree(model: &TreeEnsembleModel, instance: &[u8], background: &BackgroundSet) -> Result<ShapAttribution> {
    check_instance(model, instance)?;
    background.check(model)?;
    let phi = tree_phi(model, instance, background);
    Ok(finish(model, instance, background, phi))
}

/// Attributions for every row of `data`, computed in parallel, in row order.
pub fn explain_rows(
    model: &TreeEnsembleModel,
    data: &BinaryDataset,
    background: &BackgroundSet,
) -> Result<Vec<ShapAttribution>> {
    if data.catalog() != &model.catalog {
        return Err(Error::WidthMismatch {
            expected: model.width(),
            got: data.n_features(),
        });
    }
    background.check(model)?;
    Ok((0..data.n_rows())
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            finish(model, x, background, tree_phi(model, x, background))
                .with_ids(Some(data.row_ids()[i]), None)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    #[serde(with = "float17")]
    pub mean_abs_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinPoint {
    pub feature: String,
    pub value: u8,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    /// Every feature, by mean |phi| descending, ties by name.
    pub ranking: Vec<FeatureImportance>,
    /// `(value, phi)` for each explained row and each of the top features.
    pub points: Vec<ViolinPoint>,
    pub n_instances: usize,
    pub top_n: usize,
}

fn mean_abs(attrs: &[ShapAttribution], width: usize) -> Vec<f64> {
    let mut sums = vec![0.0; width];
    for a in attrs {
        for (s, p) in sums.iter_mut().zip(&a.phi) {
            *s += p.abs();
        }
    }
    let n = attrs.len().max(1) as f64;
    sums.into_iter().map(|s| s / n).collect()
}

fn by_importance(catalog: &FeatureCatalog, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| catalog.name(a).cmp(catalog.name(b))));
    order
}

pub fn global_importance(
    model: &TreeEnsembleModel,
    test_set: &BinaryDataset,
    background: &BackgroundSet,
    top_n: usize,
) -> Result<GlobalImportance> {
    if test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let attrs = explain_rows(model, test_set, background)?;
    let scores = mean_abs(&attrs, model.width());
    let order = by_importance(&model.catalog, &scores);
    let top: Vec<usize> = order.iter().copied().take(top_n).collect();
    let mut points = Vec::with_capacity(attrs.len() * top.len());
    for (row, attr) in test_set.rows().zip(&attrs) {
        for &f in &top {
            points.push(ViolinPoint {
                feature: model.catalog.name(f).to_owned(),
                value: row[f],
                phi: attr.phi[f],
            });
        }
    }
    Ok(GlobalImportance {
        ranking: order
            .iter()
            .map(|&f| FeatureImportance {
                feature: model.catalog.name(f).to_owned(),
                mean_abs_phi: scores[f],
            })
            .collect(),
        points,
        n_instances: attrs.len(),
        top_n: top.len(),
    })
}

impl GlobalImportance {
    /// `feature,value,phi` rows.
    pub fn write_violin_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "value", "phi"])?;
        for p in &self.points {
            w.write_record([p.feature.as_str(), &p.value.to_string(), &float17::format(p.phi)])?;
        }
        w.flush().map_err(|e| Error::io("<violin csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftEntry {
    pub feature: String,
    #[serde(with = "float17")]
    pub intra_mean_abs: f64,
    #[serde(with = "float17")]
    pub cross_mean_abs: f64,
}

impl ShiftEntry {
    pub fn shift(&self) -> f64 {
        self.cross_mean_abs - self.intra_mean_abs
    }
}

/// Paired mean |phi| per feature, by the larger of the pair descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceShift {
    pub entries: Vec<ShiftEntry>,
}

impl ImportanceShift {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "intra_mean_abs", "cross_mean_abs"])?;
        for e in &self.entries {
            w.write_record([
                e.feature.as_str(),
                &float17::format(e.intra_mean_abs),
                &float17::format(e.cross_mean_abs),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<shift csv>", e))?;
        Ok(())
    }

    pub fn top(&self, n: usize) -> &[ShiftEntry] {
        &self.entries[..n.min(self.entries.len())]
    }
}

pub fn importance_shift(
    model: &TreeEnsembleModel,
    intra_test: &BinaryDataset,
    cross_test: &BinaryDataset,
    background: &BackgroundSet,
) -> Result<ImportanceShift> {
    if intra_test.is_empty() || cross_test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let intra = mean_abs(&explain_rows(model, intra_test, background)?, model.width());
    let cross = mean_abs(&explain_rows(model, cross_test, background)?, model.width());
    let peak: Vec<f64> = intra.iter().zip(&cross).map(|(a, b)| a.max(*b)).collect();
    let entries = by_importance(&model.catalog, &peak)
        .into_iter()
        .map(|f| ShiftEntry {
            feature: model.catalog.name(f).to_owned(),
            intra_mean_abs: intra[f],
            cross_mean_abs: cross[f],
        })
        .collect();
    Ok(ImportanceShift { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfallStep {
    /// Feature name, or `rest (n features)` for the collapsed tail.
    pub label: String,
    pub feature: Option<usize>,
    #[serde(with = "float17")]
    pub phi: f64,
    #[serde(with = "float17")]
    pub start: f64,
    #[serde(with = "float17")]
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    #[serde(with = "float17")]
    pub base_value: f64,
    #[serde(with = "float17")]
    pub fx: f64,
    pub space: OutputSpace,
    pub steps: Vec<WaterfallStep>,
}

/// Non-zero contributions by |phi| descending (ties by feature index), with
/// everything past `top_n` collapsed into one trailing step. Steps chain
/// from the base value; the last one ends at `fx` up to rounding.
pub fn waterfall(attribution: &ShapAttribution, catalog: &FeatureCatalog, top_n: usize) -> Result<Waterfall> {
    if top_n == 0 {
        return Err(Error::InvalidConfig("waterfall top_n must be at least 1".into()));
    }
    if catalog.len() != attribution.phi.len() {
        return Err(Error::WidthMismatch {
            expected: catalog.len(),
            got: attribution.phi.len(),
        });
    }
    let phi = &attribution.phi;
    let mut order: Vec<usize> = (0..phi.len()).filter(|&i| phi[i] != 0.0).collect();
    order.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()).then(a.cmp(&b)));

    let mut steps = Vec::new();
    let mut level = attribution.base_value;
    let mut push = |label: String, feature: Option<usize>, value: f64| {
        steps.push(WaterfallStep {
            label,
            feature,
            phi: value,
            start: level,
            end: level + value,
        });
        level += value;
    };
    for &i in order.iter().take(top_n) {
        push(catalog.name(i).to_owned(), Some(i), phi[i]);
    }
    if order.len() > top_n {
        let tail: HashSet<usize> = order[top_n..].iter().copied().collect();
        let rest: f64 = (0..phi.len()).filter(|i| tail.contains(i)).map(|i| phi[i]).sum();
        push(format!("rest ({} features)", tail.len()), None, rest);
    }
    Ok(Waterfall {
        base_value: attribution.base_value,
        fx: attribution.fx,
        space: attribution.space,
        steps,
    })
}
