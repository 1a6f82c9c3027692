//! Seeded synthetic domain pairs with controlled feature shift.
//!
//! Features are sampled independently given the label. Each feature belongs
//! to a group whose role fixes how its class-conditional probabilities in
//! domain B relate to those in domain A.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BinaryDataset, FeatureCatalog};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRole {
    /// Same probabilities in both domains.
    SharedStable,
    /// Benign and malware probabilities swap in domain B.
    SharedFlipped,
    /// Class gap shrunk toward its midpoint in domain B.
    SharedAttenuated,
    AOnly,
    BOnly,
    /// Class-independent, present in both catalogs.
    Noise,
}

impl GroupRole {
    fn prefix(&self) -> &'static str {
        match self {
            GroupRole::SharedStable => "stable",
            GroupRole::SharedFlipped => "flipped",
            GroupRole::SharedAttenuated => "attenuated",
            GroupRole::AOnly => "a_only",
            GroupRole::BOnly => "b_only",
            GroupRole::Noise => "noise",
        }
    }

    fn in_a(&self) -> bool {
        *self != GroupRole::BOnly
    }

    fn in_b(&self) -> bool {
        *self != GroupRole::AOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub role: GroupRole,
    pub count: usize,
    /// P(feature = 1 | benign) in domain A (in B for `b_only`).
    pub p_benign: f64,
    /// P(feature = 1 | malware) in domain A (in B for `b_only`).
    pub p_malware: f64,
    /// Fraction of the class gap kept in domain B by `shared_attenuated`.
    #[serde(default)]
    pub attenuation: f64,
}

impl FeatureGroup {
    /// `(P(1 | benign), P(1 | malware))` in domain A and in domain B.
    fn probabilities(&self) -> ([f64; 2], [f64; 2]) {
        let a = [self.p_benign, self.p_malware];
        let b = match self.role {
            GroupRole::SharedFlipped => [self.p_malware, self.p_benign],
            GroupRole::SharedAttenuated => {
                let mid = (self.p_benign + self.p_malware) / 2.0;
                [
                    mid + (self.p_benign - mid) * self.attenuation,
                    mid + (self.p_malware - mid) * self.attenuation,
                ]
            }
            _ => a,
        };
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    #[serde(default = "default_domain_a")]
    pub domain_a: String,
    #[serde(default = "default_domain_b")]
    pub domain_b: String,
    pub rows_a: usize,
    pub rows_b: usize,
    /// P(label = malware) in both domains.
    pub malware_rate: f64,
    pub groups: Vec<FeatureGroup>,
    pub seed: u64,
}

fn default_domain_a() -> String {
    "A".into()
}

fn default_domain_b() -> String {
    "B".into()
}

/// One generated feature and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureOrigin {
    pub name: String,
    pub role: GroupRole,
    pub probs_a: [f64; 2],
    pub probs_b: [f64; 2],
}

impl Default for ShiftSpec {
    /// The pinned spec used by the default experiment configuration.
    fn default() -> Self {
        let g = |role, count, p_benign, p_malware, attenuation| FeatureGroup {
            role,
            count,
            p_benign,
            p_malware,
            attenuation,
        };
        ShiftSpec {
            domain_a: default_domain_a(),
            domain_b: default_domain_b(),
            rows_a: 6000,
            rows_b: 6000,
            malware_rate: 0.5,
            groups: vec![
                g(GroupRole::SharedStable, 30, 0.12, 0.42, 0.0),
                g(GroupRole::SharedFlipped, 4, 0.10, 0.60, 0.0),
                g(GroupRole::SharedAttenuated, 12, 0.15, 0.45, 0.3),
                g(GroupRole::Noise, 14, 0.30, 0.30, 0.0),
                g(GroupRole::AOnly, 60, 0.10, 0.30, 0.0),
                g(GroupRole::BOnly, 60, 0.10, 0.30, 0.0),
            ],
            seed: 20_240_917,
        }
    }
}

impl ShiftSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ShiftSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.malware_rate > 0.0 && self.malware_rate < 1.0) {
            return bad(format!("malware_rate {} outside (0, 1)", self.malware_rate));
        }
        if self.rows_a == 0 || self.rows_b == 0 {
            return bad("both domains need rows".into());
        }
        if self.domain_a == self.domain_b {
            return bad("domain names must differ".into());
        }
        for (i, g) in self.groups.iter().enumerate() {
            let probs = [g.p_benign, g.p_malware, g.attenuation];
            if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("group {i}: probabilities must lie in [0, 1]"));
            }
            if g.role == GroupRole::Noise && g.p_benign != g.p_malware {
                return bad(format!("group {i}: noise must be class-independent"));
            }
        }
        let width = |f: fn(&GroupRole) -> bool| -> usize {
            self.groups.iter().filter(|g| f(&g.role)).map(|g| g.count).sum()
        };
        if width(GroupRole::in_a) == 0 || width(GroupRole::in_b) == 0 {
            return bad("each domain needs at least one feature".into());
        }
        if !self.groups.iter().any(|g| g.count > 0 && g.p_benign != g.p_malware) {
            return bad("no informative feature group".into());
        }
        Ok(())
    }

    /// Every generated feature in spec order, with its per-domain probabilities.
    pub fn features(&self) -> Vec<FeatureOrigin> {
        let mut counters = std::collections::HashMap::new();
        let mut out = Vec::new();
        for g in &self.groups {
            let (probs_a, probs_b) = g.probabilities();
            for _ in 0..g.count {
                let c = counters.entry(g.role).or_insert(0usize);
                out.push(FeatureOrigin {
                    name: format!("{}_{:03}", g.role.prefix(), c),
                    role: g.role,
                    probs_a,
                    probs_b,
                });
                *c += 1;
            }
        }
        out
    }

    pub fn names_with_role(&self, role: GroupRole) -> Vec<String> {
        self.features()
            .into_iter()
            .filter(|f| f.role == role)
            .map(|f| f.name)
            .collect()
    }
}

fn generate_domain(spec: &ShiftSpec, features: &[&FeatureOrigin], probs: impl Fn(&FeatureOrigin) -> [f64; 2], rows: usize, tag: &str) -> Result<BinaryDataset> {
    let catalog = FeatureCatalog::new(features.iter().map(|f| f.name.clone()))?;
    let table: Vec<[f64; 2]> = features.iter().map(|f| probs(f)).collect();
    let generated: Vec<(u8, Vec<u8>)> = (0..rows as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::stream(spec.seed, tag, r);
            let y = u8::from(rng.gen_bool(spec.malware_rate));
            let row = table
                .iter()
                .map(|p| u8::from(rng.gen_bool(p[y as usize])))
                .collect();
            (y, row)
        })
        .collect();
    let mut cells = Vec::with_capacity(rows * table.len());
    let mut labels = Vec::with_capacity(rows);
    for (y, row) in generated {
        labels.push(y);
        cells.extend(row);
    }
    BinaryDataset::from_flat(Arc::new(catalog), cells, labels)
}

/// Generates both domains, each tagged with its domain name.
pub fn generate_domain_pair(spec: &ShiftSpec) -> Result<(BinaryDataset, BinaryDataset)> {
    spec.validate()?;
    let features = spec.features();
    let in_a: Vec<&FeatureOrigin> = features.iter().filter(|f| f.role.in_a()).collect();
    let in_b: Vec<&FeatureOrigin> = features.iter().filter(|f| f.role.in_b()).collect();
    let a = generate_domain(spec, &in_a, |f| f.probs_a, spec.rows_a, "synth-domain-a")?;
    let b = generate_domain(spec, &in_b, |f| f.probs_b, spec.rows_b, "synth-domain-b")?;
    Ok((a.with_domain(&spec.domain_a), b.with_domain(&spec.domain_b)))
}
