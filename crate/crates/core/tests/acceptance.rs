//! Acceptance gate. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{auc_pair_count, brute_force_shapley, pearson_binary_oracle, random_dataset, random_model, rng};
use permshift::attribution::{shap_tree, BackgroundSet};
use permshift::data::{align_to_catalog, write_csv, BinaryDataset, FeatureCatalog};
use permshift::experiment::{run_pipeline_with_threads, DataSource, DomainFile, ExperimentConfig, RunOutput};
use permshift::learners::{self, LearnerConfig, ModelKind};
use permshift::metrics::{roc_auc, roc_auc_fraction};
use permshift::selection::{pearson_r, select_minimal_topk};
use permshift::synth::{generate_domain_pair, GroupRole, ShiftSpec};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.1?}, limit {limit:?}"))
    }
}

fn shapley_additivity() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1001);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for m in 0..20 {
        let kind = if m % 2 == 0 { ModelKind::RandomForest } else { ModelKind::Gbdt };
        let p = r.gen_range(5..40);
        let data = random_dataset(&mut r, 400, p);
        let model = random_model(&mut r, kind, &data);
        let bg = BackgroundSet::sample(&data, 50, r.gen()).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            let x = data.row(r.gen_range(0..data.n_rows()));
            let a = shap_tree(&model, x, &bg).map_err(|e| e.to_string())?;
            worst = worst.max((a.base_value + a.phi.iter().sum::<f64>() - a.fx).abs());
            pairs += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    check(
        worst <= 1e-9,
        format!("{pairs} pairs, max |base + sum(phi) - f(x)| = {worst:.2e}, {:.1?}", start.elapsed()),
        format!("max gap {worst:.2e} > 1e-9"),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2002);
    let mut worst: f64 = 0.0;
    let cases = 240;
    for c in 0..cases {
        let kind = if c % 2 == 0 { ModelKind::RandomForest } else { ModelKind::Gbdt };
        let p = r.gen_range(1..=12);
        let data = random_dataset(&mut r, 150, p);
        let model = random_model(&mut r, kind, &data);
        let bg = BackgroundSet::sample(&data, r.gen_range(1..=32), r.gen()).map_err(|e| e.to_string())?;
        let bg_rows: Vec<Vec<u8>> = bg.rows().rows().map(<[u8]>::to_vec).collect();
        let x = data.row(r.gen_range(0..data.n_rows()));
        let fast = shap_tree(&model, x, &bg).map_err(|e| e.to_string())?;
        let (phi, base, fx) = brute_force_shapley(&model, x, &bg_rows);
        worst = worst.max((fast.base_value - base).abs()).max((fast.fx - fx).abs());
        for (a, b) in fast.phi.iter().zip(&phi) {
            worst = worst.max((a - b).abs());
        }
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    check(
        worst <= 1e-9,
        format!("{cases} cases, max deviation {worst:.2e}, {:.1?}", start.elapsed()),
        format!("max deviation {worst:.2e} > 1e-9"),
    )
}

fn pearson_oracle() -> Outcome {
    let mut r = rng(3003);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for v in 0..10_000 {
        let n = if v % 100 == 0 { r.gen_range(10_000..=100_000) } else { r.gen_range(2..2_000) };
        let (px, py) = (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0));
        let x: Vec<u8> = (0..n).map(|_| u8::from(r.gen_bool(px))).collect();
        let y: Vec<u8> = x
            .iter()
            .map(|&a| if r.gen_bool(0.3) { a } else { u8::from(r.gen_bool(py)) })
            .collect();
        let xf: Vec<f64> = x.iter().map(|&a| f64::from(a)).collect();
        let yf: Vec<f64> = y.iter().map(|&a| f64::from(a)).collect();
        let got = pearson_r(&xf, &yf).map_err(|e| e.to_string())?;
        match pearson_binary_oracle(&x, &y) {
            Some(want) => {
                worst = worst.max((got.r - want).abs());
                compared += 1;
            }
            None => {
                if !got.degenerate || got.r != 0.0 {
                    return Err(format!("constant input not flagged at vector {v}"));
                }
            }
        }
        if x.iter().any(|&a| a != x[0]) {
            let own = pearson_r(&xf, &xf).map_err(|e| e.to_string())?.r;
            if own != 1.0 {
                return Err(format!("r(x, x) = {own:.17} at vector {v}"));
            }
        }
    }
    check(
        worst <= 1e-12,
        format!("{compared} vectors, max deviation {worst:.2e}, r(x,x) = 1 exactly"),
        format!("max deviation {worst:.2e} > 1e-12"),
    )
}

fn reduced(num: u64, den: u64) -> (u64, u64) {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = gcd(num, den).max(1);
    (num / g, den / g)
}

fn auc_oracle() -> Outcome {
    let mut r = rng(4004);
    let mut cases = 0;
    let mut compare = |scores: &[f64], labels: &[u8]| -> Result<(), String> {
        let want = auc_pair_count(scores, labels);
        let got = roc_auc_fraction(scores, labels).map_err(|e| e.to_string())?;
        if reduced(got.0, got.1) != reduced(want.0, want.1) {
            return Err(format!("fraction {got:?} vs pair count {want:?} on {} rows", scores.len()));
        }
        let value = roc_auc(scores, labels).map_err(|e| e.to_string())?;
        if value != want.0 as f64 / want.1 as f64 {
            return Err(format!("float {value} vs {}", want.0 as f64 / want.1 as f64));
        }
        cases += 1;
        Ok(())
    };
    // Every labeling and every score pattern over three levels up to 6 rows.
    for n in 2..=6u32 {
        for lab in 0..1u32 << n {
            let labels: Vec<u8> = (0..n).map(|i| (lab >> i & 1) as u8).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            for pattern in 0..3u32.pow(n) {
                let scores: Vec<f64> = (0..n).map(|i| f64::from(pattern / 3u32.pow(i) % 3) / 2.0).collect();
                compare(&scores, &labels)?;
            }
        }
    }
    for _ in 0..400 {
        let n = r.gen_range(2..=1000);
        let levels = r.gen_range(1..=n.min(50)) as u32;
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.gen_bool(0.4))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(0..levels)) / f64::from(levels)).collect();
        compare(&scores, &labels)?;
    }
    Ok(format!("{cases} inputs, exact rational agreement including ties"))
}

/// 5 label-derived features (each with its own flip rate) and 95 noise
/// features, shuffled into one catalog.
fn selection_dataset(seed: u64, n: usize) -> (BinaryDataset, Vec<String>) {
    let mut r = rng(seed);
    let flips = [0.10, 0.14, 0.18, 0.22, 0.26];
    let mut names: Vec<String> = (0..5)
        .map(|i| format!("informative_{i}"))
        .chain((0..95).map(|i| format!("noise_{i:02}")))
        .collect();
    names.shuffle(&mut r);
    let noise_p: Vec<f64> = (0..names.len()).map(|_| r.gen_range(0.1..0.9)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = u8::from(r.gen_bool(0.5));
        let row = names
            .iter()
            .enumerate()
            .map(|(j, name)| match name.strip_prefix("informative_") {
                Some(i) => y ^ u8::from(r.gen_bool(flips[i.parse::<usize>().unwrap()])),
                None => u8::from(r.gen_bool(noise_p[j])),
            })
            .collect();
        rows.push(row);
        labels.push(y);
    }
    let informative = names.iter().filter(|n| n.starts_with("informative_")).cloned().collect();
    (BinaryDataset::new(FeatureCatalog::new(names).unwrap(), rows, labels).unwrap(), informative)
}

/// Evaluates every k from 1 to the full width and returns the smallest k whose
/// holdout accuracy reaches the full-feature accuracy.
fn exhaustive_k(train: &BinaryDataset, holdout: &BinaryDataset, cfg: &LearnerConfig) -> usize {
    let p = train.n_features();
    let mut scored: Vec<(f64, String)> = (0..p)
        .map(|j| {
            let r = pearson_binary_oracle(&train.column(j), train.labels()).unwrap_or(0.0);
            (r.abs(), train.catalog().name(j).to_owned())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let accuracy = |k: usize| {
        let keep: Vec<&str> = scored[..k].iter().map(|s| s.1.as_str()).collect();
        let cat = FeatureCatalog::new(train.catalog().names().iter().filter(|n| keep.contains(&n.as_str()))).unwrap();
        let model = learners::train(&align_to_catalog(train, &cat), cfg).unwrap();
        let ho = align_to_catalog(holdout, &cat);
        let probs = model.predict_dataset(&ho).unwrap();
        probs.iter().zip(ho.labels()).filter(|(&p, &y)| u8::from(p >= 0.5) == y).count() as f64 / ho.n_rows() as f64
    };
    let full = accuracy(p);
    (1..=p).find(|&k| accuracy(k) >= full).unwrap()
}

fn selection_recovery() -> Outcome {
    let (data, informative) = selection_dataset(5005, 3000);
    let train = data.subset(&(0..2000).collect::<Vec<_>>());
    let holdout = data.subset(&(2000..3000).collect::<Vec<_>>());
    let cfg = LearnerConfig::forest().with_seed(17);
    let result = select_minimal_topk(&train, &holdout, &cfg, 1.0, 1).map_err(|e| e.to_string())?;
    let oracle = exhaustive_k(&train, &holdout, &cfg);
    let missing: Vec<&String> = informative.iter().filter(|n| !result.selected.contains(n)).collect();
    check(
        result.k <= 15 && missing.is_empty() && result.k == oracle,
        format!("k = {} (exhaustive oracle {oracle}), all 5 informative features selected", result.k),
        format!("k = {}, oracle {oracle}, missing {missing:?}", result.k),
    )
}

fn default_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn domain_shift(run: &RunOutput, elapsed: Duration) -> Outcome {
    let kind = ModelKind::RandomForest;
    let acc = |r: Option<&permshift::report::EvalReport>| r.map(|r| r.accuracy).ok_or("missing report".to_string());
    let intra_a = acc(run.intra_report(kind, "A"))?;
    let intra_b = acc(run.intra_report(kind, "B"))?;
    let a_to_b = acc(run.cross_report(kind, "A", "B"))?;
    let b_to_a = acc(run.cross_report(kind, "B", "A"))?;
    let hyb = |d: &str| run.hybrid_summary(kind, d).map(|s| s.mean.accuracy).ok_or("missing hybrid".to_string());
    let (hyb_a, hyb_b) = (hyb("A")?, hyb("B")?);
    let summary = format!(
        "intra A {intra_a:.4} B {intra_b:.4}; cross A->B {a_to_b:.4} (drop {:.1}) B->A {b_to_a:.4} (drop {:.1}); \
         hybrid A {hyb_a:.4} B {hyb_b:.4}; {elapsed:.1?}",
        (intra_b - a_to_b) * 100.0,
        (intra_a - b_to_a) * 100.0
    );
    let ok = intra_a >= 0.93
        && intra_b >= 0.93
        && (intra_b - a_to_b >= 0.10 || intra_a - b_to_a >= 0.10)
        && (intra_a - hyb_a).abs() <= 0.05
        && (intra_b - hyb_b).abs() <= 0.05
        && elapsed < Duration::from_secs(120);
    check(ok, summary.clone(), summary)
}

fn importance_shift(run: &RunOutput) -> Outcome {
    let spec = ShiftSpec::default();
    let flipped = spec.names_with_role(GroupRole::SharedFlipped);
    let explain = run.explain.as_ref().ok_or("explain stage missing")?;
    let mut lines = Vec::new();
    let mut hit = false;
    for s in &explain.shifts {
        let top: Vec<&str> = s.shift.top(5).iter().map(|e| e.feature.as_str()).collect();
        let n = top.iter().filter(|f| flipped.iter().any(|g| g == *f)).count();
        hit |= n > 0;
        lines.push(format!("{}->{}: {n} flipped in top 5", s.source, s.target));
    }
    check(hit, lines.join("; "), lines.join("; "))
}

fn report_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let mut bytes = std::fs::read(&p).unwrap();
                if p.file_name().is_some_and(|n| n == "index.json") {
                    let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                    v.as_object_mut().unwrap().remove("generated_unix_time");
                    bytes = serde_json::to_vec(&v).unwrap();
                }
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    out
}

fn determinism(first: &Path, threads: usize) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline_with_threads(default_config(dir.path()), Some(threads)).map_err(|e| e.to_string())?;
    let (a, b) = (report_files(first), report_files(dir.path()));
    let differing: Vec<_> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    check(
        a.len() == b.len() && differing.is_empty() && a.len() > 6,
        format!("{} files byte-identical across 1 and {threads} threads (index timestamp excluded)", a.len()),
        format!("{} vs {} files, differing: {differing:?}", a.len(), b.len()),
    )
}

/// Runs the file-based pipeline on the CSVs named by PERMSHIFT_CSV_A and
/// PERMSHIFT_CSV_B (label column PERMSHIFT_LABEL, default `Result`), or on
/// generated stand-ins when they are not set.
fn dataset_mode() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let label = std::env::var("PERMSHIFT_LABEL").unwrap_or_else(|_| "Result".into());
    let (paths, source) = match (std::env::var("PERMSHIFT_CSV_A"), std::env::var("PERMSHIFT_CSV_B")) {
        (Ok(a), Ok(b)) => ([PathBuf::from(a), PathBuf::from(b)], "user-supplied CSVs"),
        _ => {
            let spec = ShiftSpec {
                rows_a: 800,
                rows_b: 800,
                ..ShiftSpec::default()
            };
            let (a, b) = generate_domain_pair(&spec).map_err(|e| e.to_string())?;
            let mut paths = [dir.path().join("a.csv"), dir.path().join("b.csv")];
            for (d, p) in [&a, &b].into_iter().zip(&mut paths) {
                let f = std::fs::File::create(&*p).map_err(|e| e.to_string())?;
                write_csv(d, &label, f).map_err(|e| e.to_string())?;
            }
            (paths, "generated stand-in CSVs (set PERMSHIFT_CSV_A/B for real data)")
        }
    };
    let mut cfg = ExperimentConfig {
        data: DataSource::Files {
            domain_a: DomainFile {
                name: "A".into(),
                path: paths[0].clone(),
            },
            domain_b: DomainFile {
                name: "B".into(),
                path: paths[1].clone(),
            },
            label_column: label,
        },
        output_dir: dir.path().join("out"),
        ..ExperimentConfig::default()
    };
    cfg.selection.step = 5;
    let run = run_pipeline_with_threads(cfg, None).map_err(|e| e.to_string())?;
    let reports = run.files.iter().filter(|p| p.extension().is_some_and(|e| e == "json")).count();
    check(
        run.intra.len() == 2 && run.cross.len() == 4 && run.hybrid.len() == 2,
        format!("{source}: all regimes ran, {reports} JSON files"),
        format!("{source}: incomplete run"),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, outcome: Outcome| {
        match &outcome {
            Ok(msg) => println!("PASS  {name}: {msg}"),
            Err(msg) => println!("FAIL  {name}: {msg}"),
        }
        results.push((name, outcome));
    };

    report("shapley additivity", shapley_additivity());
    report("shapley oracle equivalence", oracle_equivalence());
    report("pearson oracle", pearson_oracle());
    report("auc oracle", auc_oracle());
    report("selection recovery", selection_recovery());

    let first = tempfile::tempdir().expect("temp dir");
    let start = Instant::now();
    let run = run_pipeline_with_threads(default_config(first.path()), Some(1));
    let elapsed = start.elapsed();
    match run {
        Ok(run) => {
            report("domain-shift reproduction", domain_shift(&run, elapsed));
            report("importance-shift detection", importance_shift(&run));
            report("determinism across threads", determinism(first.path(), 4));
        }
        Err(e) => {
            for name in ["domain-shift reproduction", "importance-shift detection", "determinism across threads"] {
                report(name, Err(format!("pipeline failed: {e}")));
            }
        }
    }
    report("optional dataset mode", dataset_mode());

    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
