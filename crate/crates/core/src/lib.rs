//! Binary permission-vector malware classification under domain shift:
//! data handling, tree learners, metrics, Shapley attribution, synthetic
//! domain pairs and the experiment driver.

pub mod attribution;
pub mod data;
pub mod error;
pub mod experiment;
pub mod learners;
pub mod metrics;
pub mod report;
pub mod seed;
pub mod selection;
pub mod synth;

pub use data::{BinaryDataset, FeatureCatalog};
pub use error::{Error, ErrorCategory, Result};
pub use learners::{LearnerConfig, ModelKind, TreeEnsembleModel};
