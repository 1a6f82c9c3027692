//! Report schema, float formatting and atomic file output.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::learners::ModelKind;
use crate::metrics::{classification_report, confusion, roc_auc, ClassMetrics, ConfusionMatrix};

/// Serializes an `f64` as a JSON number with 17 significant digits;
/// non-finite values become `null` and read back as NaN.
pub mod float17 {
    use serde::de::Deserializer;
    use serde::ser::{Error as _, Serializer};
    use serde::{Deserialize, Serialize};
    use serde_json::value::RawValue;

    pub fn format(x: f64) -> String {
        format!("{x:.16e}")
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if !x.is_finite() {
            return s.serialize_none();
        }
        RawValue::from_string(format(*x))
            .map_err(S::Error::custom)?
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Ratio as a percentage with two decimals, ties rounded to even.
pub fn percent(x: f64) -> String {
    format!("{:.2}", (x * 10_000.0).round_ties_even() / 100.0)
}

/// Ratio as a whole percentage, the way per-class columns are tabulated.
pub fn whole_percent(x: f64) -> String {
    format!("{}", (x * 100.0).round_ties_even() as i64)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Intra,
    Cross,
    Hybrid,
}

/// Which source rows a model saw, per domain tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceAudit {
    pub rows: usize,
    /// FNV-1a of the sorted source row ids, hex.
    pub digest: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowAudit {
    pub train: BTreeMap<String, SourceAudit>,
    pub test: BTreeMap<String, SourceAudit>,
}

fn audit_of(data: &BinaryDataset) -> BTreeMap<String, SourceAudit> {
    let mut ids: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
    for (i, &id) in data.row_ids().iter().enumerate() {
        ids.entry(data.tag(i).unwrap_or("").to_owned())
            .or_default()
            .insert(id);
    }
    ids.into_iter()
        .map(|(tag, set)| {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for id in &set {
                for b in id.to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
            (
                tag,
                SourceAudit {
                    rows: set.len(),
                    digest: format!("{h:016x}"),
                },
            )
        })
        .collect()
}

impl RowAudit {
    /// `train` is `None` when the training rows are unknown (a loaded model).
    pub fn new(train: Option<&BinaryDataset>, test: &BinaryDataset) -> Self {
        RowAudit {
            train: train.map(audit_of).unwrap_or_default(),
            test: audit_of(test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub regime: Regime,
    pub model_kind: ModelKind,
    pub train_domain: String,
    pub test_domain: String,
    pub k_features: usize,
    #[serde(with = "float17")]
    pub accuracy: f64,
    #[serde(with = "float17")]
    pub auc: f64,
    pub benign: ClassMetrics,
    pub malware: ClassMetrics,
    pub confusion: ConfusionMatrix,
    pub degenerate: bool,
    pub audit: RowAudit,
}

pub struct ReportContext<'a> {
    pub regime: Regime,
    pub model_kind: ModelKind,
    pub train_domain: &'a str,
    pub test_domain: &'a str,
    pub k_features: usize,
}

impl EvalReport {
    /// Scores `probabilities` against `test`'s labels at the 0.5 threshold.
    pub fn from_scores(
        ctx: ReportContext<'_>,
        probabilities: &[f64],
        train: Option<&BinaryDataset>,
        test: &BinaryDataset,
    ) -> Result<Self> {
        let preds: Vec<u8> = probabilities.iter().map(|&p| u8::from(p >= 0.5)).collect();
        let cm = confusion(&preds, test.labels())?;
        let cr = classification_report(&cm);
        let auc = match roc_auc(probabilities, test.labels()) {
            Ok(a) => a,
            Err(Error::SingleClassLabels) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            regime: ctx.regime,
            model_kind: ctx.model_kind,
            train_domain: ctx.train_domain.to_owned(),
            test_domain: ctx.test_domain.to_owned(),
            k_features: ctx.k_features,
            accuracy: cr.accuracy,
            auc,
            benign: cr.benign,
            malware: cr.malware,
            confusion: cm,
            degenerate: cr.degenerate || auc.is_nan(),
            audit: RowAudit::new(train, test),
        })
    }

    /// One table row: precision, recall and F1 as `benign/malware` whole
    /// percentages, then AUC and accuracy.
    pub fn table_row(&self) -> String {
        let pair = |b: f64, m: f64| format!("{}/{}", whole_percent(b), whole_percent(m));
        format!(
            "{:<14} {:>3} {:>7} {:>7} {:>7} {:>6.4} {:>6}",
            self.model_kind.as_str(),
            self.k_features,
            pair(self.benign.precision, self.malware.precision),
            pair(self.benign.recall, self.malware.recall),
            pair(self.benign.f1, self.malware.f1),
            self.auc,
            percent(self.accuracy)
        )
    }
}

pub const TABLE_HEADER: &str = "classifier       k prec.B/M rec.B/M  f1.B/M    auc   acc%";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(with = "float17")]
    pub accuracy: f64,
    #[serde(with = "float17")]
    pub auc: f64,
    #[serde(with = "float17")]
    pub benign_precision: f64,
    #[serde(with = "float17")]
    pub benign_recall: f64,
    #[serde(with = "float17")]
    pub benign_f1: f64,
    #[serde(with = "float17")]
    pub malware_precision: f64,
    #[serde(with = "float17")]
    pub malware_recall: f64,
    #[serde(with = "float17")]
    pub malware_f1: f64,
}

impl MetricSummary {
    fn from_fn(reports: &[EvalReport], f: impl Fn(&[f64]) -> f64) -> Self {
        let col = |g: fn(&EvalReport) -> f64| f(&reports.iter().map(g).collect::<Vec<_>>());
        MetricSummary {
            accuracy: col(|r| r.accuracy),
            auc: col(|r| r.auc),
            benign_precision: col(|r| r.benign.precision),
            benign_recall: col(|r| r.benign.recall),
            benign_f1: col(|r| r.benign.f1),
            malware_precision: col(|r| r.malware.precision),
            malware_recall: col(|r| r.malware.recall),
            malware_f1: col(|r| r.malware.f1),
        }
    }
}

/// Arithmetic mean; exact when every value is the same.
pub fn mean(xs: &[f64]) -> f64 {
    if let Some(&first) = xs.first() {
        if xs.iter().all(|&x| x == first) {
            return first;
        }
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Fold reports for one domain with their mean and sample deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub domain: String,
    pub model_kind: ModelKind,
    pub k_features: usize,
    pub mean: MetricSummary,
    pub std: MetricSummary,
    pub folds: Vec<EvalReport>,
}

impl FoldSummary {
    pub fn new(domain: &str, model_kind: ModelKind, k_features: usize, folds: Vec<EvalReport>) -> Self {
        FoldSummary {
            domain: domain.to_owned(),
            model_kind,
            k_features,
            mean: MetricSummary::from_fn(&folds, mean),
            std: MetricSummary::from_fn(&folds, sample_std),
            folds,
        }
    }

    pub fn table_row(&self) -> String {
        format!(
            "{:<14} {:<10} acc {}% ± {:.2}  auc {:.4} ± {:.4}",
            self.model_kind.as_str(),
            self.domain,
            percent(self.mean.accuracy),
            self.std.accuracy * 100.0,
            self.mean.auc,
            self.std.auc
        )
    }
}
