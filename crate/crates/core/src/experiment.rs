//! End-to-end experiment driver: intra-domain, cross-domain and hybrid
//! regimes, attribution artifacts and report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::{
    self, global_importance, importance_shift, waterfall, BackgroundSet, FeatureImportance, OutputSpace, Waterfall,
};
use crate::data::{
    align_to_catalog, assert_disjoint_rows, load_csv, merge_common, stratified_kfold, stratified_split,
    BinaryDataset, SplitPair,
};
use crate::error::{Error, Result};
use crate::learners::{self, LearnerConfig, ModelKind, TreeEnsembleModel};
use crate::report::{self, float17, write_atomic, write_json, EvalReport, FoldSummary, Regime, ReportContext};
use crate::seed::derive_seed;
use crate::selection::{select_minimal_topk, SelectionResult};
use crate::synth::{generate_domain_pair, ShiftSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainFile {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        spec: ShiftSpec,
    },
    Files {
        domain_a: DomainFile,
        domain_b: DomainFile,
        label_column: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Intra,
    CrossAToB,
    CrossBToA,
    Hybrid,
}

impl RegimeKind {
    fn file_stem(self) -> &'static str {
        match self {
            RegimeKind::Intra => "intra",
            RegimeKind::CrossAToB => "cross_a_to_b",
            RegimeKind::CrossBToA => "cross_b_to_a",
            RegimeKind::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutMode {
    /// Select k against the domain's test split.
    TestSplit,
    /// Select k against a stratified slice carved from the training split.
    Inner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionSettings {
    pub domains: Vec<Side>,
    pub threshold: f64,
    pub step: usize,
    pub holdout: HoldoutMode,
    /// Only used with [`HoldoutMode::Inner`].
    pub holdout_fraction: f64,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings {
            domains: vec![Side::A],
            threshold: 1.0,
            step: 1,
            holdout: HoldoutMode::TestSplit,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSettings {
    pub enabled: bool,
    pub background_size: usize,
    pub top_n: usize,
    /// Test rows explained per set (the first rows of the shuffled split).
    pub max_instances: usize,
    pub waterfall_top_n: usize,
    pub global_learner: ModelKind,
    pub local_learner: ModelKind,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            enabled: true,
            background_size: 100,
            top_n: 15,
            max_instances: 300,
            waterfall_top_n: 10,
            global_learner: ModelKind::RandomForest,
            local_learner: ModelKind::Gbdt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub learners: Vec<LearnerConfig>,
    pub selection: SelectionSettings,
    pub regimes: Vec<RegimeKind>,
    pub test_fraction: f64,
    pub cv_folds: usize,
    /// Also score every hybrid fold model on each domain's original test split.
    pub eval_on_original_test: bool,
    pub explain: ExplainSettings,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic {
                spec: ShiftSpec::default(),
            },
            learners: vec![LearnerConfig::forest(), LearnerConfig::gbdt()],
            selection: SelectionSettings::default(),
            regimes: vec![
                RegimeKind::Intra,
                RegimeKind::CrossAToB,
                RegimeKind::CrossBToA,
                RegimeKind::Hybrid,
            ],
            test_fraction: 0.2,
            cv_folds: 5,
            eval_on_original_test: false,
            explain: ExplainSettings::default(),
            seed: 7,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.regimes.is_empty() {
            return bad("at least one regime is required");
        }
        if self.learners.is_empty() {
            return bad("at least one learner is required");
        }
        let mut kinds: Vec<ModelKind> = self.learners.iter().map(|l| l.kind).collect();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != self.learners.len() {
            return bad("each learner kind may appear once");
        }
        for l in &self.learners {
            l.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if self.selection.step == 0 || !(self.selection.threshold > 0.0 && self.selection.threshold <= 1.0) {
            return bad("selection needs step >= 1 and threshold in (0, 1]");
        }
        if self.explain.enabled && (self.explain.background_size == 0 || self.explain.top_n == 0 || self.explain.waterfall_top_n == 0) {
            return bad("explain sizes must be positive");
        }
        match &self.data {
            DataSource::Synthetic { spec } => spec.validate().map_err(|e| Error::Config(e.to_string()))?,
            DataSource::Files { domain_a, domain_b, .. } => {
                if domain_a.name == domain_b.name {
                    return bad("domain names must differ");
                }
                for f in [domain_a, domain_b] {
                    if !f.path.exists() {
                        return Err(Error::Config(format!("data file {} does not exist", f.path.display())));
                    }
                }
            }
        }
        Ok(())
    }
}

pub struct Domain {
    pub name: String,
    pub data: BinaryDataset,
    pub split: SplitPair,
}

/// A trained model with the training rows it saw (already in its catalog).
pub struct TrainedModel {
    pub side: Side,
    pub model: TreeEnsembleModel,
    pub train: BinaryDataset,
    pub selection: Option<SelectionResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub domain: String,
    pub k: usize,
    pub total_features: usize,
    #[serde(with = "float17")]
    pub full_feature_accuracy: f64,
    #[serde(with = "float17")]
    pub achieved_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntraResult {
    pub regime: Regime,
    pub model_kind: ModelKind,
    pub reports: Vec<EvalReport>,
    pub selection: Vec<SelectionSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossResult {
    pub regime: Regime,
    pub direction: String,
    pub model_kind: ModelKind,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridResult {
    pub regime: Regime,
    pub model_kind: ModelKind,
    pub common_features: usize,
    pub folds: usize,
    /// Per domain, scored on that domain's held-out rows of each CV fold.
    pub cv: Vec<FoldSummary>,
    /// Per domain, scored on that domain's original test split.
    pub original_test: Option<Vec<FoldSummary>>,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub domains: [Domain; 2],
    models: BTreeMap<(Side, ModelKind), TrainedModel>,
}

fn learner_seed(master: u64, tag: &str, learner: &LearnerConfig) -> LearnerConfig {
    learner
        .clone()
        .with_seed(derive_seed(master, &format!("{tag}:{}", learner.kind), learner.seed))
}

impl Experiment {
    /// Loads or generates both domains and draws their train/test splits.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (a, b) = match &config.data {
            DataSource::Synthetic { spec } => generate_domain_pair(spec)?,
            DataSource::Files {
                domain_a,
                domain_b,
                label_column,
            } => (
                load_csv(&domain_a.path, label_column)?.with_domain(&domain_a.name),
                load_csv(&domain_b.path, label_column)?.with_domain(&domain_b.name),
            ),
        };
        let make = |data: BinaryDataset, side: Side| -> Result<Domain> {
            let name = data.tag(0).unwrap_or_default().to_owned();
            let split = stratified_split(&data, config.test_fraction, derive_seed(config.seed, "split", side as u64))?;
            Ok(Domain { name, data, split })
        };
        let domains = [make(a, Side::A)?, make(b, Side::B)?];
        Ok(Experiment {
            config,
            domains,
            models: BTreeMap::new(),
        })
    }

    pub fn domain(&self, side: Side) -> &Domain {
        &self.domains[side.index()]
    }

    fn learner(&self, kind: ModelKind) -> Option<&LearnerConfig> {
        self.config.learners.iter().find(|l| l.kind == kind)
    }

    pub fn model(&self, side: Side, kind: ModelKind) -> Option<&TrainedModel> {
        self.models.get(&(side, kind))
    }

    /// Trains (once) the intra-domain model for `side`, selecting features
    /// first when the domain is configured for selection.
    pub fn ensure_model(&mut self, side: Side, kind: ModelKind) -> Result<&TrainedModel> {
        if !self.models.contains_key(&(side, kind)) {
            let learner = self
                .learner(kind)
                .ok_or_else(|| Error::Config(format!("learner {kind} not configured")))?;
            let cfg = learner_seed(self.config.seed, &format!("intra:{side:?}"), learner);
            let split = &self.domain(side).split;
            let settings = &self.config.selection;
            let selection = if settings.domains.contains(&side) {
                let (sel_train, holdout) = match settings.holdout {
                    HoldoutMode::TestSplit => (split.train.clone(), split.test.clone()),
                    HoldoutMode::Inner => {
                        let inner = stratified_split(
                            &split.train,
                            settings.holdout_fraction,
                            derive_seed(self.config.seed, "selection-holdout", side as u64),
                        )?;
                        (inner.train, inner.test)
                    }
                };
                Some(select_minimal_topk(&sel_train, &holdout, &cfg, settings.threshold, settings.step)?)
            } else {
                None
            };
            let train = match &selection {
                Some(s) => align_to_catalog(&split.train, &s.selected),
                None => split.train.clone(),
            };
            let model = learners::train(&train, &cfg)?;
            self.models.insert(
                (side, kind),
                TrainedModel {
                    side,
                    model,
                    train,
                    selection,
                },
            );
        }
        Ok(&self.models[&(side, kind)])
    }

    fn evaluate(
        &self,
        trained: &TrainedModel,
        test: &BinaryDataset,
        regime: Regime,
        test_domain: &str,
    ) -> Result<EvalReport> {
        let aligned = align_to_catalog(test, &trained.model.catalog);
        let probs = trained.model.predict_dataset(&aligned)?;
        let report = EvalReport::from_scores(
            ReportContext {
                regime,
                model_kind: trained.model.kind,
                train_domain: &self.domain(trained.side).name,
                test_domain,
                k_features: trained.model.width(),
            },
            &probs,
            Some(&trained.train),
            &aligned,
        )?;
        check_no_leak(&report, &trained.train, &aligned)?;
        Ok(report)
    }

    /// Scores the `source` intra model of `kind` on an arbitrary test set,
    /// aligned to the model's catalog and tagged as a cross-domain report.
    pub fn score_cross(
        &mut self,
        source: Side,
        kind: ModelKind,
        test: &BinaryDataset,
        test_domain: &str,
    ) -> Result<EvalReport> {
        self.ensure_model(source, kind)?;
        self.evaluate(&self.models[&(source, kind)], test, Regime::Cross, test_domain)
    }

    pub fn run_intra(&mut self) -> Result<Vec<IntraResult>> {
        let kinds: Vec<ModelKind> = self.config.learners.iter().map(|l| l.kind).collect();
        let mut out = Vec::new();
        for kind in kinds {
            let mut reports = Vec::new();
            let mut selection = Vec::new();
            for side in [Side::A, Side::B] {
                self.ensure_model(side, kind)?;
                let trained = &self.models[&(side, kind)];
                let domain = self.domain(side);
                reports.push(self.evaluate(trained, &domain.split.test, Regime::Intra, &domain.name)?);
                if let Some(s) = &trained.selection {
                    selection.push(SelectionSummary {
                        domain: domain.name.clone(),
                        k: s.k,
                        total_features: domain.data.n_features(),
                        full_feature_accuracy: s.full_feature_accuracy,
                        achieved_accuracy: s.achieved_accuracy,
                    });
                }
            }
            out.push(IntraResult {
                regime: Regime::Intra,
                model_kind: kind,
                reports,
                selection,
            });
        }
        Ok(out)
    }

    /// Scores the `source` intra model on the other domain's test split after
    /// aligning it to the model's catalog.
    pub fn run_cross(&mut self, source: Side) -> Result<Vec<CrossResult>> {
        let kinds: Vec<ModelKind> = self.config.learners.iter().map(|l| l.kind).collect();
        let target = source.other();
        let mut out = Vec::new();
        for kind in kinds {
            let tdom = &self.domains[target.index()];
            let (test, name) = (tdom.split.test.clone(), tdom.name.clone());
            let report = self.score_cross(source, kind, &test, &name)?;
            let tdom = self.domain(target);
            out.push(CrossResult {
                regime: Regime::Cross,
                direction: format!("{}->{}", self.domain(source).name, tdom.name),
                model_kind: kind,
                report,
            });
        }
        Ok(out)
    }

    pub fn run_hybrid(&self) -> Result<Vec<HybridResult>> {
        let [a, b] = &self.domains;
        let merged = merge_common(&a.split.train, &b.split.train, derive_seed(self.config.seed, "hybrid-merge", 0))?;
        let common = merged.catalog().clone();
        let folds = stratified_kfold(&merged, self.config.cv_folds, derive_seed(self.config.seed, "hybrid-folds", 0))?;
        let hybrid_name = format!("{}+{}", a.name, b.name);
        let originals: Vec<BinaryDataset> = self
            .domains
            .iter()
            .map(|d| align_to_catalog(&d.split.test, &common))
            .collect();

        let mut out = Vec::new();
        for learner in &self.config.learners {
            let mut cv: Vec<Vec<EvalReport>> = vec![Vec::new(); 2];
            let mut orig: Vec<Vec<EvalReport>> = vec![Vec::new(); 2];
            for i in 0..folds.k() {
                let (train_idx, test_idx) = folds.split(i);
                let train = merged.subset(&train_idx);
                let held_out = merged.subset(&test_idx);
                assert_disjoint_rows(&train, &held_out)?;
                let cfg = learner_seed(self.config.seed, &format!("hybrid:{i}"), learner);
                let model = learners::train(&train, &cfg)?;
                for (d, domain) in self.domains.iter().enumerate() {
                    let rows = held_out.subset(&held_out.indices_with_tag(&domain.name));
                    cv[d].push(score(&model, &train, &rows, &hybrid_name, &domain.name)?);
                    if self.config.eval_on_original_test {
                        orig[d].push(score(&model, &train, &originals[d], &hybrid_name, &domain.name)?);
                    }
                }
            }
            let summarize = |reports: Vec<Vec<EvalReport>>| -> Vec<FoldSummary> {
                reports
                    .into_iter()
                    .zip(&self.domains)
                    .map(|(r, d)| FoldSummary::new(&d.name, learner.kind, common.len(), r))
                    .collect()
            };
            out.push(HybridResult {
                regime: Regime::Hybrid,
                model_kind: learner.kind,
                common_features: common.len(),
                folds: folds.k(),
                cv: summarize(cv),
                original_test: self.config.eval_on_original_test.then(|| summarize(orig)),
            });
        }
        Ok(out)
    }

    /// Global importance, importance shift and archetype waterfalls.
    pub fn run_explain(&mut self) -> Result<ExplainResult> {
        let settings = self.config.explain.clone();
        let global_kind = self.pick_kind(settings.global_learner);
        let local_kind = self.pick_kind(settings.local_learner);
        let mut global = Vec::new();
        let mut shifts = Vec::new();
        for side in [Side::A, Side::B] {
            self.ensure_model(side, global_kind)?;
        }
        self.ensure_model(Side::A, local_kind)?;

        for side in [Side::A, Side::B] {
            let trained = &self.models[&(side, global_kind)];
            let bg = self.background(trained)?;
            let own = self.explained_rows(side, &trained.model);
            let other = self.explained_rows(side.other(), &trained.model);
            let g = global_importance(&trained.model, &own, &bg, settings.top_n)?;
            global.push(GlobalArtifact {
                domain: self.domain(side).name.clone(),
                model_kind: global_kind,
                importance: g,
            });
            let s = importance_shift(&trained.model, &own, &other, &bg)?;
            shifts.push(ShiftArtifact {
                source: self.domain(side).name.clone(),
                target: self.domain(side.other()).name.clone(),
                model_kind: global_kind,
                shift: s,
            });
        }
        let trained = &self.models[&(Side::A, local_kind)];
        let bg = self.background(trained)?;
        let test = align_to_catalog(&self.domain(Side::A).split.test, &trained.model.catalog);
        let local = archetype_waterfalls(
            &trained.model,
            &test,
            &bg,
            settings.waterfall_top_n,
            &self.domain(Side::A).name,
        )?;
        Ok(ExplainResult { global, shifts, local })
    }

    fn pick_kind(&self, preferred: ModelKind) -> ModelKind {
        if self.learner(preferred).is_some() {
            preferred
        } else {
            self.config.learners[0].kind
        }
    }

    fn background(&self, trained: &TrainedModel) -> Result<BackgroundSet> {
        BackgroundSet::sample(
            &trained.train,
            self.config.explain.background_size,
            derive_seed(self.config.seed, "background", trained.side as u64),
        )
    }

    fn explained_rows(&self, side: Side, model: &TreeEnsembleModel) -> BinaryDataset {
        let test = &self.domain(side).split.test;
        let n = test.n_rows().min(self.config.explain.max_instances);
        let head: Vec<usize> = (0..n).collect();
        align_to_catalog(&test.subset(&head), &model.catalog)
    }
}

fn score(
    model: &TreeEnsembleModel,
    train: &BinaryDataset,
    test: &BinaryDataset,
    train_domain: &str,
    test_domain: &str,
) -> Result<EvalReport> {
    let probs = model.predict_dataset(test)?;
    let report = EvalReport::from_scores(
        ReportContext {
            regime: Regime::Hybrid,
            model_kind: model.kind,
            train_domain,
            test_domain,
            k_features: model.width(),
        },
        &probs,
        Some(train),
        test,
    )?;
    check_no_leak(&report, train, test)?;
    Ok(report)
}

/// Rows that trained a model must never be among the rows scoring it, and a
/// model scored on another domain must not have seen any of its rows.
fn check_no_leak(report: &EvalReport, train: &BinaryDataset, test: &BinaryDataset) -> Result<()> {
    assert_disjoint_rows(train, test)?;
    if report.regime == Regime::Cross
        && report.train_domain != report.test_domain
        && report.audit.train.contains_key(&report.test_domain)
    {
        return Err(Error::Invariant(format!(
            "cross report trained on target domain {}",
            report.test_domain
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalArtifact {
    pub domain: String,
    pub model_kind: ModelKind,
    pub importance: attribution::GlobalImportance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftArtifact {
    pub source: String,
    pub target: String,
    pub model_kind: ModelKind,
    pub shift: attribution::ImportanceShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    TruePositive,
    TrueNegative,
    FalsePositive,
    FalseNegative,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::TruePositive,
        Archetype::TrueNegative,
        Archetype::FalsePositive,
        Archetype::FalseNegative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::TruePositive => "true_positive",
            Archetype::TrueNegative => "true_negative",
            Archetype::FalsePositive => "false_positive",
            Archetype::FalseNegative => "false_negative",
        }
    }

    fn matches(self, label: u8, pred: u8) -> bool {
        matches!(
            (self, label, pred),
            (Archetype::TruePositive, 1, 1)
                | (Archetype::TrueNegative, 0, 0)
                | (Archetype::FalsePositive, 0, 1)
                | (Archetype::FalseNegative, 1, 0)
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiEntry {
    pub feature: String,
    pub value: u8,
    #[serde(with = "float17")]
    pub phi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionExport {
    pub instance_id: Option<u64>,
    pub model_id: Option<String>,
    pub space: OutputSpace,
    #[serde(with = "float17")]
    pub base_value: f64,
    #[serde(with = "float17")]
    pub fx: f64,
    #[serde(with = "float17")]
    pub base_probability: f64,
    #[serde(with = "float17")]
    pub fx_probability: f64,
    pub phi: Vec<PhiEntry>,
}

impl AttributionExport {
    pub fn new(attr: &attribution::ShapAttribution, model: &TreeEnsembleModel, instance: &[u8]) -> Self {
        AttributionExport {
            instance_id: attr.instance_id,
            model_id: attr.model_id.clone(),
            space: attr.space,
            base_value: attr.base_value,
            fx: attr.fx,
            base_probability: attr.base_probability,
            fx_probability: attr.fx_probability,
            phi: attr
                .phi
                .iter()
                .enumerate()
                .map(|(i, &p)| PhiEntry {
                    feature: model.catalog.name(i).to_owned(),
                    value: instance[i],
                    phi: p,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchetypeExplanation {
    pub archetype: Archetype,
    pub available: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribution: Option<AttributionExport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waterfall: Option<Waterfall>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalArtifact {
    pub domain: String,
    pub model_kind: ModelKind,
    pub archetypes: Vec<ArchetypeExplanation>,
}

/// Explains the first true positive, true negative, false positive and
/// false negative of `test`; missing cells are reported as unavailable.
pub fn archetype_waterfalls(
    model: &TreeEnsembleModel,
    test: &BinaryDataset,
    background: &BackgroundSet,
    top_n: usize,
    domain: &str,
) -> Result<LocalArtifact> {
    let probs = model.predict_dataset(test)?;
    let mut archetypes = Vec::new();
    for arch in Archetype::ALL {
        let found = (0..test.n_rows()).find(|&i| arch.matches(test.label(i), u8::from(probs[i] >= 0.5)));
        archetypes.push(match found {
            None => ArchetypeExplanation {
                archetype: arch,
                available: false,
                reason: Some(format!("no {} rows in the test set", arch.as_str())),
                label: None,
                attribution: None,
                waterfall: None,
            },
            Some(i) => {
                let x = test.row(i);
                let attr = attribution::shap_tree(model, x, background)?
                    .with_ids(Some(test.row_ids()[i]), Some(&format!("{domain}:{}", model.kind)));
                ArchetypeExplanation {
                    archetype: arch,
                    available: true,
                    reason: None,
                    label: Some(test.label(i)),
                    waterfall: Some(waterfall(&attr, &model.catalog, top_n)?),
                    attribution: Some(AttributionExport::new(&attr, model, x)),
                }
            }
        });
    }
    Ok(LocalArtifact {
        domain: domain.to_owned(),
        model_kind: model.kind,
        archetypes,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainResult {
    pub global: Vec<GlobalArtifact>,
    pub shifts: Vec<ShiftArtifact>,
    pub local: LocalArtifact,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub kind: String,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunIndex {
    pub generated_unix_time: u64,
    pub seed: u64,
    pub domains: Vec<String>,
    pub files: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub intra: Vec<IntraResult>,
    pub cross: Vec<CrossResult>,
    pub hybrid: Vec<HybridResult>,
    pub explain: Option<ExplainResult>,
    pub files: Vec<PathBuf>,
}

impl RunOutput {
    pub fn intra_report(&self, kind: ModelKind, domain: &str) -> Option<&EvalReport> {
        self.intra
            .iter()
            .filter(|r| r.model_kind == kind)
            .flat_map(|r| &r.reports)
            .find(|r| r.test_domain == domain)
    }

    pub fn cross_report(&self, kind: ModelKind, source: &str, target: &str) -> Option<&EvalReport> {
        self.cross
            .iter()
            .map(|c| &c.report)
            .find(|r| r.model_kind == kind && r.train_domain == source && r.test_domain == target)
    }

    pub fn hybrid_summary(&self, kind: ModelKind, domain: &str) -> Option<&FoldSummary> {
        self.hybrid
            .iter()
            .filter(|h| h.model_kind == kind)
            .flat_map(|h| &h.cv)
            .find(|s| s.domain == domain)
    }

    /// Plain-text tables for the terminal.
    pub fn render_tables(&self) -> String {
        let mut out = String::new();
        for r in &self.intra {
            for rep in &r.reports {
                out.push_str(&format!("intra {}:\n  {}\n  {}\n", rep.test_domain, report::TABLE_HEADER, rep.table_row()));
            }
        }
        for c in &self.cross {
            out.push_str(&format!("cross {}:\n  {}\n  {}\n", c.direction, report::TABLE_HEADER, c.report.table_row()));
        }
        for h in &self.hybrid {
            for s in &h.cv {
                out.push_str(&format!("hybrid ({} common features): {}\n", h.common_features, s.table_row()));
            }
        }
        out
    }
}

/// Runs the configured regimes and the explain stage, writing every report
/// and artifact under the output directory.
pub fn run_pipeline(config: ExperimentConfig) -> Result<RunOutput> {
    let out_dir = config.output_dir.clone();
    let regimes = config.regimes.clone();
    let explain = config.explain.enabled;
    let mut exp = Experiment::prepare(config)?;
    let mut out = RunOutput::default();
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    let record = |kind: &str, rel: PathBuf, files: &mut Vec<(String, PathBuf)>| {
        files.push((kind.to_owned(), rel));
    };

    for regime in &regimes {
        match regime {
            RegimeKind::Intra => {
                let results = exp.run_intra()?;
                for r in &results {
                    let rel = PathBuf::from(format!("intra_{}.json", r.model_kind));
                    write_json(&out_dir.join(&rel), r)?;
                    record("report", rel, &mut files);
                }
                out.intra = results;
            }
            RegimeKind::CrossAToB | RegimeKind::CrossBToA => {
                let source = if *regime == RegimeKind::CrossAToB { Side::A } else { Side::B };
                let results = exp.run_cross(source)?;
                for r in &results {
                    let rel = PathBuf::from(format!("{}_{}.json", regime.file_stem(), r.model_kind));
                    write_json(&out_dir.join(&rel), r)?;
                    record("report", rel, &mut files);
                }
                out.cross.extend(results);
            }
            RegimeKind::Hybrid => {
                let results = exp.run_hybrid()?;
                for r in &results {
                    let rel = PathBuf::from(format!("hybrid_{}.json", r.model_kind));
                    write_json(&out_dir.join(&rel), r)?;
                    record("report", rel, &mut files);
                }
                out.hybrid = results;
            }
        }
    }

    if explain {
        let result = exp.run_explain()?;
        for g in &result.global {
            let rel = PathBuf::from(format!("explain/violin_{}_{}.csv", g.domain, g.model_kind));
            let mut buf = Vec::new();
            g.importance.write_violin_csv(&mut buf)?;
            write_atomic(&out_dir.join(&rel), &buf)?;
            record("violin", rel, &mut files);
            let rel = PathBuf::from(format!("explain/importance_{}_{}.json", g.domain, g.model_kind));
            let ranking: &Vec<FeatureImportance> = &g.importance.ranking;
            write_json(&out_dir.join(&rel), ranking)?;
            record("importance", rel, &mut files);
        }
        for s in &result.shifts {
            let rel = PathBuf::from(format!("explain/shift_{}_to_{}_{}.csv", s.source, s.target, s.model_kind));
            let mut buf = Vec::new();
            s.shift.write_csv(&mut buf)?;
            write_atomic(&out_dir.join(&rel), &buf)?;
            record("shift", rel, &mut files);
        }
        let rel = PathBuf::from(format!(
            "explain/waterfalls_{}_{}.json",
            result.local.domain, result.local.model_kind
        ));
        write_json(&out_dir.join(&rel), &result.local)?;
        record("waterfalls", rel, &mut files);
        out.explain = Some(result);
    }

    for ((side, kind), trained) in &exp.models {
        let rel = PathBuf::from(format!("models/{}_{}.json", exp.domain(*side).name, kind));
        trained.model.save(out_dir.join(&rel))?;
        record("model", rel, &mut files);
        if let Some(sel) = &trained.selection {
            let rel = PathBuf::from(format!("selection/{}_{}.json", exp.domain(*side).name, kind));
            write_json(&out_dir.join(&rel), sel)?;
            record("selection", rel, &mut files);
        }
    }

    let index = RunIndex {
        generated_unix_time: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        seed: exp.config.seed,
        domains: exp.domains.iter().map(|d| d.name.clone()).collect(),
        files: files
            .iter()
            .map(|(kind, p)| IndexEntry {
                kind: kind.clone(),
                path: p.to_string_lossy().into_owned(),
            })
            .collect(),
    };
    write_json(&out_dir.join("index.json"), &index)?;
    out.files = files.into_iter().map(|(_, p)| out_dir.join(p)).collect();
    out.files.push(out_dir.join("index.json"));
    Ok(out)
}

/// [`run_pipeline`] inside a dedicated thread pool of `threads` workers.
pub fn run_pipeline_with_threads(config: ExperimentConfig, threads: Option<usize>) -> Result<RunOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_pipeline(config))
}
