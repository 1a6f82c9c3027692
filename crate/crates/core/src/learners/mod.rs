//! Tree-ensemble learners over binary features: a bagged Gini forest and a
//! logistic-loss gradient-boosted ensemble.

mod forest;
mod gbdt;
mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use forest::train_random_forest;
pub use gbdt::{train_gbdt, train_gbdt_traced};
pub use tree::TreeNode;

use crate::data::{BinaryDataset, FeatureCatalog};
use crate::error::{Error, Result};
use crate::seed;
use tree::{build_tree, Criterion, Prepared, RowTargets, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RandomForest,
    Gbdt,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::RandomForest => "random_forest",
            ModelKind::Gbdt => "gbdt",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_forest" | "forest" | "rf" => Ok(ModelKind::RandomForest),
            "gbdt" | "hgb" => Ok(ModelKind::Gbdt),
            other => Err(Error::InvalidConfig(format!("unknown learner `{other}`"))),
        }
    }
}

/// Number of candidate features drawn per forest split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    /// `ceil(sqrt(width))`
    Sqrt,
    All,
    Count(usize),
}

impl FeatureSubsample {
    pub fn resolve(&self, width: usize) -> usize {
        match *self {
            FeatureSubsample::Sqrt => ((width as f64).sqrt().ceil() as usize).max(1),
            FeatureSubsample::All => width,
            FeatureSubsample::Count(c) => c.clamp(1, width.max(1)),
        }
    }
}

/// Fields left out of a serialized config take the defaults for its `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartialLearnerConfig")]
pub struct LearnerConfig {
    pub kind: ModelKind,
    pub n_trees: usize,
    /// `None` grows until no split improves the criterion.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Shrinkage applied to every boosted tree; ignored by the forest.
    pub learning_rate: f64,
    /// Ignored by the boosted learner, which always scans every feature.
    pub feature_subsample: FeatureSubsample,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialLearnerConfig {
    kind: ModelKind,
    n_trees: Option<usize>,
    #[serde(default, deserialize_with = "present")]
    max_depth: Option<Option<usize>>,
    min_samples_leaf: Option<usize>,
    learning_rate: Option<f64>,
    feature_subsample: Option<FeatureSubsample>,
    seed: Option<u64>,
}

// Distinguishes an explicit `null` from an absent field.
fn present<'de, D, T>(d: D) -> std::result::Result<Option<T>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    T::deserialize(d).map(Some)
}

impl TryFrom<PartialLearnerConfig> for LearnerConfig {
    type Error = std::convert::Infallible;

    fn try_from(p: PartialLearnerConfig) -> std::result::Result<Self, Self::Error> {
        let d = LearnerConfig::for_kind(p.kind);
        Ok(LearnerConfig {
            kind: p.kind,
            n_trees: p.n_trees.unwrap_or(d.n_trees),
            max_depth: p.max_depth.unwrap_or(d.max_depth),
            min_samples_leaf: p.min_samples_leaf.unwrap_or(d.min_samples_leaf),
            learning_rate: p.learning_rate.unwrap_or(d.learning_rate),
            feature_subsample: p.feature_subsample.unwrap_or(d.feature_subsample),
            seed: p.seed.unwrap_or(d.seed),
        })
    }
}

impl LearnerConfig {
    pub fn forest() -> Self {
        LearnerConfig {
            kind: ModelKind::RandomForest,
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            learning_rate: 1.0,
            feature_subsample: FeatureSubsample::Sqrt,
            seed: 0,
        }
    }

    pub fn gbdt() -> Self {
        LearnerConfig {
            kind: ModelKind::Gbdt,
            n_trees: 100,
            max_depth: Some(6),
            min_samples_leaf: 20,
            learning_rate: 0.1,
            feature_subsample: FeatureSubsample::All,
            seed: 0,
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::RandomForest => Self::forest(),
            ModelKind::Gbdt => Self::gbdt(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidConfig("max_depth must be at least 1".into()));
        }
        if self.kind == ModelKind::Gbdt && !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.feature_subsample == FeatureSubsample::Count(0) {
            return Err(Error::InvalidConfig("feature_subsample count must be positive".into()));
        }
        Ok(())
    }

    fn tree_params(&self, criterion: Criterion, width: usize) -> TreeParams {
        TreeParams {
            criterion,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            max_features: match criterion {
                Criterion::Gini => Some(self.feature_subsample.resolve(width)),
                Criterion::Newton { .. } => None,
            },
        }
    }
}

/// Per-row inputs for growing a single tree.
#[derive(Debug, Clone)]
pub enum TreeTargets {
    /// Non-negative row weights; classes come from the dataset labels.
    /// Grown with the Gini criterion and the config's feature subsampling.
    Weights(Vec<f64>),
    /// Logistic-loss gradients and hessians; grown with Newton leaves.
    Gradients { grad: Vec<f64>, hess: Vec<f64> },
}

pub fn train_tree(
    data: &BinaryDataset,
    targets: &TreeTargets,
    config: &LearnerConfig,
    seed: u64,
) -> Result<TreeNode> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.n_rows();
    let check = |len: usize| {
        if len == n {
            Ok(())
        } else {
            Err(Error::LengthMismatch { left: n, right: len })
        }
    };
    let prepared = Prepared::new(data);
    let mut rng = seed::stream(seed, "tree", 0);
    Ok(match targets {
        TreeTargets::Weights(w) => {
            check(w.len())?;
            let params = config.tree_params(Criterion::Gini, data.n_features());
            build_tree(
                &prepared,
                RowTargets::Weighted {
                    weights: w,
                    labels: data.labels(),
                },
                &params,
                Some(&mut rng),
            )
        }
        TreeTargets::Gradients { grad, hess } => {
            check(grad.len())?;
            check(hess.len())?;
            let params = config.tree_params(
                Criterion::Newton {
                    learning_rate: config.learning_rate,
                },
                data.n_features(),
            );
            build_tree(&prepared, RowTargets::Gradients { grad, hess }, &params, None)
        }
    })
}

pub fn train(data: &BinaryDataset, config: &LearnerConfig) -> Result<TreeEnsembleModel> {
    match config.kind {
        ModelKind::RandomForest => train_random_forest(data, config),
        ModelKind::Gbdt => train_gbdt(data, config),
    }
}

pub(crate) fn require_both_classes(data: &BinaryDataset) -> Result<()> {
    let [b, m] = data.class_counts();
    if b == 0 || m == 0 {
        return Err(Error::SingleClassDataset);
    }
    Ok(())
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// A trained forest or boosted ensemble, bound to its training catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub kind: ModelKind,
    pub hyperparams: LearnerConfig,
    /// Log-odds prior for the boosted model; 0 for the forest.
    pub base_score: f64,
    pub catalog: FeatureCatalog,
    pub train_seed: u64,
    pub trees: Vec<TreeNode>,
}

impl TreeEnsembleModel {
    pub fn from_parts(
        kind: ModelKind,
        trees: Vec<TreeNode>,
        catalog: FeatureCatalog,
        base_score: f64,
        hyperparams: LearnerConfig,
    ) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidConfig("an ensemble needs at least one tree".into()));
        }
        if let Some(f) = trees.iter().filter_map(TreeNode::max_feature).max() {
            if f >= catalog.len() {
                return Err(Error::WidthMismatch {
                    expected: catalog.len(),
                    got: f + 1,
                });
            }
        }
        Ok(TreeEnsembleModel {
            kind,
            train_seed: hyperparams.seed,
            hyperparams,
            base_score,
            catalog,
            trees,
        })
    }

    pub fn width(&self) -> usize {
        self.catalog.len()
    }

    fn check_width(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.width() {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Output in the additive explanation space: the forest's mean vote
    /// probability, or the boosted model's log-odds margin.
    pub fn raw_output(&self, x: &[u8]) -> Result<f64> {
        self.check_width(x)?;
        Ok(self.raw_output_unchecked(x))
    }

    pub(crate) fn raw_output_unchecked(&self, x: &[u8]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        match self.kind {
            ModelKind::RandomForest => sum / self.trees.len() as f64,
            ModelKind::Gbdt => self.base_score + sum,
        }
    }

    /// Maps a value in the explanation space to a probability.
    pub fn to_probability(&self, raw: f64) -> f64 {
        match self.kind {
            ModelKind::RandomForest => raw,
            ModelKind::Gbdt => logistic(raw),
        }
    }

    pub fn predict_proba(&self, x: &[u8]) -> Result<f64> {
        Ok(self.to_probability(self.raw_output(x)?))
    }

    /// Class 1 iff the probability is at least `threshold`.
    pub fn predict_label(&self, x: &[u8], threshold: f64) -> Result<u8> {
        Ok(u8::from(self.predict_proba(x)? >= threshold))
    }

    /// Probabilities for every row; `data` must use the model's catalog.
    pub fn predict_dataset(&self, data: &BinaryDataset) -> Result<Vec<f64>> {
        if data.catalog() != &self.catalog {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                got: data.n_features(),
            });
        }
        Ok(data
            .rows()
            .map(|r| self.to_probability(self.raw_output_unchecked(r)))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let model = TreeEnsembleModel::deserialize(&mut de)?;
        de.end()?;
        Self::from_parts(
            model.kind,
            model.trees,
            model.catalog,
            model.base_score,
            model.hyperparams,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::report::write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(n: usize) -> FeatureCatalog {
        FeatureCatalog::new((0..n).map(|i| format!("f{i}"))).unwrap()
    }

    #[test]
    fn partial_learner_config_takes_kind_defaults() {
        let g: LearnerConfig = serde_json::from_str(r#"{"kind": "gbdt", "n_trees": 7}"#).unwrap();
        assert_eq!(g, LearnerConfig { n_trees: 7, ..LearnerConfig::gbdt() });
        let f: LearnerConfig = serde_json::from_str(r#"{"kind": "random_forest", "max_depth": 3}"#).unwrap();
        assert_eq!(f.max_depth, Some(3));
        let unbounded: LearnerConfig = serde_json::from_str(r#"{"kind": "gbdt", "max_depth": null}"#).unwrap();
        assert_eq!(unbounded.max_depth, None);
        let full = LearnerConfig::forest().with_seed(9);
        assert_eq!(serde_json::from_str::<LearnerConfig>(&serde_json::to_string(&full).unwrap()).unwrap(), full);
        assert!(serde_json::from_str::<LearnerConfig>(r#"{"kind": "gbdt", "n_tres": 7}"#).is_err());
    }

    /// Label copied from feature 0; feature 1 is noise.
    fn separable(n: usize) -> BinaryDataset {
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|i| vec![(i % 2) as u8, ((i / 2) % 2) as u8, ((i * 7) % 3 == 0) as u8])
            .collect();
        let labels = rows.iter().map(|r| r[0]).collect();
        BinaryDataset::new(catalog(3), rows, labels).unwrap()
    }

    #[test]
    fn pure_data_yields_single_leaf() {
        let d = BinaryDataset::new(catalog(2), vec![vec![1, 0], vec![0, 1], vec![1, 1]], vec![1, 1, 1])
            .unwrap();
        let cfg = LearnerConfig::forest();
        let t = train_tree(&d, &TreeTargets::Weights(vec![1.0; 3]), &cfg, 1).unwrap();
        assert_eq!(t, TreeNode::leaf(1.0));
    }

    #[test]
    fn separable_feature_gives_stump() {
        let d = separable(40);
        let mut cfg = LearnerConfig::forest();
        cfg.feature_subsample = FeatureSubsample::All;
        let t = train_tree(&d, &TreeTargets::Weights(vec![1.0; 40]), &cfg, 1).unwrap();
        assert_eq!(t, TreeNode::split(0, TreeNode::leaf(0.0), TreeNode::leaf(1.0)));
    }

    #[test]
    fn max_depth_one_limits_internal_nodes() {
        let rows: Vec<Vec<u8>> = (0..64u32)
            .map(|i| (0..6).map(|b| ((i >> b) & 1) as u8).collect())
            .collect();
        let labels = rows.iter().map(|r| r[1] ^ r[4]).collect();
        let d = BinaryDataset::new(catalog(6), rows, labels).unwrap();
        let mut cfg = LearnerConfig::forest();
        cfg.max_depth = Some(1);
        cfg.feature_subsample = FeatureSubsample::All;
        let w = TreeTargets::Weights((0..64).map(|i| f64::from(i % 3)).collect());
        let t = train_tree(&d, &w, &cfg, 3).unwrap();
        assert!(t.n_internal() <= 1);
    }

    #[test]
    fn min_samples_leaf_blocks_small_children() {
        let d = separable(10);
        let mut cfg = LearnerConfig::forest();
        cfg.min_samples_leaf = 6;
        cfg.feature_subsample = FeatureSubsample::All;
        let t = train_tree(&d, &TreeTargets::Weights(vec![1.0; 10]), &cfg, 0).unwrap();
        assert_eq!(t.n_internal(), 0);
    }

    #[test]
    fn target_length_is_checked() {
        let d = separable(4);
        let cfg = LearnerConfig::forest();
        assert!(matches!(
            train_tree(&d, &TreeTargets::Weights(vec![1.0; 3]), &cfg, 0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn prediction_conventions() {
        let stump = TreeNode::split(0, TreeNode::leaf(0.2), TreeNode::leaf(0.8));
        let cfg = LearnerConfig::forest();
        let m = TreeEnsembleModel::from_parts(ModelKind::RandomForest, vec![stump], catalog(1), 0.0, cfg.clone())
            .unwrap();
        assert_eq!(m.predict_proba(&[1]).unwrap(), 0.8);
        assert_eq!(m.predict_proba(&[0]).unwrap(), 0.2);
        assert!(matches!(m.predict_proba(&[0, 1]), Err(Error::WidthMismatch { .. })));

        let m = TreeEnsembleModel::from_parts(
            ModelKind::RandomForest,
            vec![TreeNode::leaf(0.2), TreeNode::leaf(0.8)],
            catalog(1),
            0.0,
            cfg.clone(),
        )
        .unwrap();
        assert_eq!(m.predict_proba(&[0]).unwrap(), 0.5);
        assert_eq!(m.predict_label(&[0], 0.5).unwrap(), 1);
        assert_eq!(m.predict_label(&[0], 0.0).unwrap(), 1);

        let m = TreeEnsembleModel::from_parts(
            ModelKind::RandomForest,
            vec![TreeNode::leaf(0.3); 4],
            catalog(2),
            0.0,
            cfg.clone(),
        )
        .unwrap();
        assert!((m.predict_proba(&[0, 0]).unwrap() - 0.3).abs() < 1e-15);

        let m = TreeEnsembleModel::from_parts(ModelKind::RandomForest, vec![TreeNode::leaf(0.49)], catalog(1), 0.0, cfg)
            .unwrap();
        assert_eq!(m.predict_label(&[1], 0.5).unwrap(), 0);

        let m = TreeEnsembleModel::from_parts(
            ModelKind::Gbdt,
            vec![TreeNode::leaf(0.0)],
            catalog(1),
            0.0,
            LearnerConfig::gbdt(),
        )
        .unwrap();
        assert_eq!(m.predict_proba(&[1]).unwrap(), 0.5);
    }

    #[test]
    fn from_parts_validates() {
        let cfg = LearnerConfig::forest();
        assert!(TreeEnsembleModel::from_parts(ModelKind::RandomForest, vec![], catalog(1), 0.0, cfg.clone()).is_err());
        let bad = TreeNode::split(3, TreeNode::leaf(0.0), TreeNode::leaf(1.0));
        assert!(matches!(
            TreeEnsembleModel::from_parts(ModelKind::RandomForest, vec![bad], catalog(2), 0.0, cfg),
            Err(Error::WidthMismatch { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = LearnerConfig::gbdt();
        c.n_trees = 0;
        assert!(c.validate().is_err());
        let mut c = LearnerConfig::gbdt();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = LearnerConfig::forest();
        c.max_depth = Some(0);
        assert!(c.validate().is_err());
        assert_eq!(FeatureSubsample::Sqrt.resolve(120), 11);
        assert_eq!(FeatureSubsample::Sqrt.resolve(100), 10);
    }

    #[test]
    fn deep_model_json_roundtrip() {
        let mut node = TreeNode::leaf(0.1);
        for d in 0..300 {
            node = TreeNode::split(d % 4, node, TreeNode::leaf(d as f64 / 301.0));
        }
        let m = TreeEnsembleModel::from_parts(ModelKind::RandomForest, vec![node], catalog(4), 0.0, LearnerConfig::forest())
            .unwrap();
        let back = TreeEnsembleModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
