use std::path::PathBuf;

use thiserror::Error;

/// Coarse classification used by the command-line driver for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Invariant,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),
    #[error("non-binary value `{value}` at data row {row}, column `{column}`")]
    NonBinaryValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate feature name `{0}`")]
    DuplicateFeatureName(String),
    #[error("invalid feature name `{0}`")]
    InvalidFeatureName(String),
    #[error("feature catalog is empty")]
    EmptyCatalog,
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("dataset is malformed: {0}")]
    MalformedDataset(String),
    #[error("class {class} has {have} rows, at least {need} required")]
    InsufficientClassRows { class: u8, have: usize, need: usize },
    #[error("feature catalogs share no features")]
    EmptyIntersection,
    #[error("only one class present in the data")]
    SingleClassDataset,
    #[error("only one class present in the labels")]
    SingleClassLabels,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("at least {need} samples required, got {have}")]
    TooFewSamples { have: usize, need: usize },
    #[error("instance width {got} does not match catalog width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("exact Shapley enumeration supports at most {max} features, model has {got}")]
    TooManyFeaturesForExact { max: usize, got: usize },
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid shift spec: {0}")]
    InvalidSpec(String),
    #[error("experiment configuration error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::Config(_) => {
                ErrorCategory::Config
            }
            Error::Invariant(_) => ErrorCategory::Invariant,
            Error::Io { .. } => ErrorCategory::Io,
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
