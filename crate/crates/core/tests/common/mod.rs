//! Reference implementations used only by tests, written without reusing
//! library internals.

#![allow(dead_code)]

use permshift::data::{BinaryDataset, FeatureCatalog};
use permshift::learners::{self, LearnerConfig, ModelKind, TreeEnsembleModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn catalog(p: usize) -> FeatureCatalog {
    FeatureCatalog::new((0..p).map(|i| format!("f{i:02}"))).unwrap()
}

/// Random rows whose label follows a noisy rule over a few features, so that
/// trained trees have non-trivial structure.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> BinaryDataset {
    loop {
        let density: Vec<f64> = (0..p).map(|_| rng.gen_range(0.15..0.85)).collect();
        let weights: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<u8> = density.iter().map(|&d| u8::from(rng.gen_bool(d))).collect();
            let mut z: f64 = row.iter().zip(&weights).map(|(&b, w)| f64::from(b) * w).sum();
            if p >= 2 && row[0] == 1 && row[1] == 1 {
                z -= 2.0;
            }
            z += rng.gen_range(-1.0..1.0) - weights.iter().sum::<f64>() / 2.0;
            labels.push(u8::from(z > 0.0));
            rows.push(row);
        }
        if labels.contains(&0) && labels.contains(&1) {
            return BinaryDataset::new(catalog(p), rows, labels).unwrap();
        }
    }
}

pub fn random_model(rng: &mut ChaCha8Rng, kind: ModelKind, data: &BinaryDataset) -> TreeEnsembleModel {
    let mut cfg = LearnerConfig::for_kind(kind).with_seed(rng.gen());
    match kind {
        ModelKind::RandomForest => {
            cfg.n_trees = rng.gen_range(3..=20);
            cfg.max_depth = if rng.gen_bool(0.5) { None } else { Some(rng.gen_range(2..=8)) };
        }
        ModelKind::Gbdt => {
            cfg.n_trees = rng.gen_range(3..=30);
            cfg.max_depth = Some(rng.gen_range(1..=6));
            cfg.min_samples_leaf = rng.gen_range(1..=10);
            cfg.learning_rate = rng.gen_range(0.05..1.0);
        }
    }
    learners::train(data, &cfg).unwrap()
}

/// The model output that Shapley values decompose: probability for the
/// forest, log-odds for the boosted model.
pub fn additive_output(model: &TreeEnsembleModel, x: &[u8]) -> f64 {
    match model.kind {
        ModelKind::RandomForest => model.predict_proba(x).unwrap(),
        ModelKind::Gbdt => {
            let p = model.predict_proba(x).unwrap();
            let raw = model.raw_output(x).unwrap();
            debug_assert!((1.0 / (1.0 + (-raw).exp()) - p).abs() < 1e-12);
            raw
        }
    }
}

/// Interventional coalition value: mean output over the background with the
/// instance's values on `mask` and the background row's values elsewhere.
pub fn coalition(model: &TreeEnsembleModel, x: &[u8], background: &[Vec<u8>], mask: u32) -> f64 {
    let mut total = 0.0;
    let mut z = vec![0u8; x.len()];
    for b in background {
        for j in 0..x.len() {
            z[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
        }
        total += additive_output(model, &z);
    }
    total / background.len() as f64
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Shapley values by enumerating all coalitions.
pub fn brute_force_shapley(model: &TreeEnsembleModel, x: &[u8], background: &[Vec<u8>]) -> (Vec<f64>, f64, f64) {
    let p = x.len();
    assert!(p <= 16);
    let values: Vec<f64> = (0..1u32 << p).map(|m| coalition(model, x, background, m)).collect();
    let pf = factorial(p);
    let mut phi = vec![0.0; p];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        for mask in 0..1u32 << p {
            if mask >> i & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = factorial(s) * factorial(p - s - 1) / pf;
            *phi_i += w * (values[(mask | 1 << i) as usize] - values[mask as usize]);
        }
    }
    (phi, values[0], values[(1usize << p) - 1])
}

/// Pearson correlation of two 0/1 vectors from exact integer counts.
pub fn pearson_binary_oracle(x: &[u8], y: &[u8]) -> Option<f64> {
    let n = x.len() as i128;
    let sx: i128 = x.iter().map(|&v| i128::from(v)).sum();
    let sy: i128 = y.iter().map(|&v| i128::from(v)).sum();
    let sxy: i128 = x.iter().zip(y).map(|(&a, &b)| i128::from(a & b)).sum();
    let num = n * sxy - sx * sy;
    let dx = n * sx - sx * sx;
    let dy = n * sy - sy * sy;
    if dx == 0 || dy == 0 {
        return None;
    }
    // num / sqrt(dx * dy), with the product formed exactly.
    let prod = (dx as u128) * (dy as u128);
    Some(num as f64 / (prod as f64).sqrt())
}

/// AUC as an unreduced fraction: (2 * wins + ties, 2 * n_pos * n_neg).
pub fn auc_pair_count(scores: &[f64], labels: &[u8]) -> (u64, u64) {
    let mut num = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                num += 2;
            } else if si == sj {
                num += 1;
            }
        }
    }
    (num, 2 * pairs)
}
