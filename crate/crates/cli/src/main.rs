use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use permshift::attribution::{global_importance, importance_shift, shap_tree, waterfall, BackgroundSet};
use permshift::data::{align_to_catalog, load_csv, stratified_split, write_csv, BinaryDataset};
use permshift::experiment::{
    archetype_waterfalls, run_pipeline, AttributionExport, DataSource, ExperimentConfig, RegimeKind,
};
use permshift::report::{write_atomic, write_json, EvalReport, Regime, ReportContext, TABLE_HEADER};
use permshift::seed::derive_seed;
use permshift::selection::select_minimal_topk;
use permshift::synth::{generate_domain_pair, ShiftSpec};
use permshift::{Error, ErrorCategory, FeatureCatalog, LearnerConfig, ModelKind, TreeEnsembleModel};

#[derive(Parser)]
#[command(name = "permshift", version, about = "Cross-domain evaluation of permission-based malware classifiers")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic domain pair as CSV files.
    GenSynth {
        /// Shift spec (JSON); defaults to the configured or built-in spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "label")]
        label_column: String,
    },
    /// Rank features by label correlation and pick the smallest top-k set.
    Select {
        #[command(flatten)]
        input: DataArgs,
        /// Holdout CSV; when absent a stratified slice of --data is held out.
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        holdout_fraction: f64,
        #[arg(long, default_value = "random_forest")]
        learner: ModelKind,
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        #[arg(long, default_value_t = 1)]
        step: usize,
    },
    /// Train a model on a CSV file.
    Train {
        #[command(flatten)]
        input: DataArgs,
        #[arg(long, default_value = "random_forest")]
        learner: ModelKind,
        /// Restrict training to this catalog (newline-separated names).
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        n_trees: Option<usize>,
    },
    /// Score a model on data from its own domain.
    Eval {
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Score a model on another domain after aligning it to the model's catalog.
    CrossEval {
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Train on the common features of both domains with stratified CV.
    Hybrid {
        /// Also score fold models on each domain's original test split.
        #[arg(long)]
        eval_on_original_test: bool,
    },
    /// Attribution artifacts: violin data, importance shift and waterfalls.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: DataArgs,
        /// Second test set for the importance-shift table.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Background rows; defaults to --data.
        #[arg(long)]
        background: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        background_size: usize,
        #[arg(long, default_value_t = 15)]
        top_n: usize,
        #[arg(long, default_value_t = 300)]
        max_instances: usize,
        #[arg(long, default_value_t = 10)]
        waterfall_top_n: usize,
        /// Extra row indices of --data to explain individually.
        #[arg(long = "instance")]
        instances: Vec<usize>,
    },
    /// Run every configured regime and the explain stage.
    Report {
        #[arg(long)]
        eval_on_original_test: bool,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
}

#[derive(Args)]
struct ScoringArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: DataArgs,
    /// Name of the model's training domain in the report.
    #[arg(long, default_value = "A")]
    train_domain: String,
    /// Name of the scored domain in the report.
    #[arg(long, default_value = "B")]
    test_domain: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::category) {
        Some(ErrorCategory::Config) => 2,
        Some(ErrorCategory::Data) => 3,
        Some(ErrorCategory::Invariant) => 4,
        Some(ErrorCategory::Io) | None => 1,
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> anyhow::Result<PathBuf> {
    Ok(load_config(cli)?.output_dir)
}

fn learner(cli: &Cli, kind: ModelKind, tag: &str) -> anyhow::Result<LearnerConfig> {
    let cfg = load_config(cli)?;
    let base = cfg
        .learners
        .iter()
        .find(|l| l.kind == kind)
        .cloned()
        .unwrap_or_else(|| LearnerConfig::for_kind(kind));
    Ok(base.clone().with_seed(derive_seed(cfg.seed, &format!("{tag}:{kind}"), base.seed)))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building thread pool")?;
    pool.install(|| dispatch(&cli))
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::GenSynth { spec, label_column } => gen_synth(cli, spec.as_deref(), label_column),
        Command::Select {
            input,
            holdout,
            holdout_fraction,
            learner: kind,
            threshold,
            step,
        } => {
            let data = load_csv(&input.data, &input.label_column)?;
            let seed = load_config(cli)?.seed;
            let (train, hold) = match holdout {
                Some(p) => (data, load_csv(p, &input.label_column)?),
                None => {
                    let s = stratified_split(&data, *holdout_fraction, derive_seed(seed, "selection-holdout", 0))?;
                    (s.train, s.test)
                }
            };
            let hold = align_to_catalog(&hold, train.catalog());
            let cfg = learner(cli, *kind, "select")?;
            let result = select_minimal_topk(&train, &hold, &cfg, *threshold, *step)?;
            let dir = out_dir(cli)?;
            write_json(&dir.join("selection.json"), &result)?;
            write_atomic(&dir.join("selected_catalog.txt"), result.selected.to_text().as_bytes())?;
            println!(
                "k = {} of {} (full-feature accuracy {:.4}, achieved {:.4})",
                result.k,
                train.n_features(),
                result.full_feature_accuracy,
                result.achieved_accuracy
            );
            Ok(())
        }
        Command::Train {
            input,
            learner: kind,
            catalog,
            n_trees,
        } => {
            let mut data = load_csv(&input.data, &input.label_column)?;
            if let Some(p) = catalog {
                let cat = FeatureCatalog::read(p)?;
                data = align_to_catalog(&data, &cat);
            }
            let mut cfg = learner(cli, *kind, "train")?;
            if let Some(n) = n_trees {
                cfg.n_trees = *n;
            }
            let model = permshift::learners::train(&data, &cfg)?;
            let path = out_dir(cli)?.join(format!("model_{kind}.json"));
            model.save(&path)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Eval { scoring } => score(cli, scoring, Regime::Intra),
        Command::CrossEval { scoring } => score(cli, scoring, Regime::Cross),
        Command::Hybrid { eval_on_original_test } => {
            let mut cfg = load_config(cli)?;
            cfg.regimes = vec![RegimeKind::Hybrid];
            cfg.explain.enabled = false;
            cfg.eval_on_original_test |= eval_on_original_test;
            let out = run_pipeline(cfg)?;
            print!("{}", out.render_tables());
            Ok(())
        }
        Command::Explain {
            model,
            input,
            compare,
            background,
            background_size,
            top_n,
            max_instances,
            waterfall_top_n,
            instances,
        } => explain(
            cli,
            ExplainArgs {
                model,
                input,
                compare: compare.as_deref(),
                background: background.as_deref(),
                background_size: *background_size,
                top_n: *top_n,
                max_instances: *max_instances,
                waterfall_top_n: *waterfall_top_n,
                instances,
            },
        ),
        Command::Report { eval_on_original_test } => {
            let mut cfg = load_config(cli)?;
            cfg.eval_on_original_test |= eval_on_original_test;
            let out = run_pipeline(cfg)?;
            print!("{}", out.render_tables());
            println!("{} files written", out.files.len());
            Ok(())
        }
    }
}

fn gen_synth(cli: &Cli, spec_path: Option<&Path>, label_column: &str) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let mut spec = match (spec_path, &cfg.data) {
        (Some(p), _) => ShiftSpec::load(p)?,
        (None, DataSource::Synthetic { spec }) => spec.clone(),
        (None, DataSource::Files { .. }) => ShiftSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let (a, b) = generate_domain_pair(&spec)?;
    let dir = cfg.output_dir;
    for d in [&a, &b] {
        let name = d.tag(0).unwrap_or_default();
        let path = dir.join(format!("domain_{name}.csv"));
        let mut buf = Vec::new();
        write_csv(d, label_column, &mut buf)?;
        write_atomic(&path, &buf)?;
        println!("{} ({} rows, {} features)", path.display(), d.n_rows(), d.n_features());
    }
    write_json(&dir.join("shift_spec.json"), &spec)?;
    Ok(())
}

fn score(cli: &Cli, args: &ScoringArgs, regime: Regime) -> anyhow::Result<()> {
    let model = TreeEnsembleModel::load(&args.model)?;
    let data = load_csv(&args.input.data, &args.input.label_column)?.with_domain(&args.test_domain);
    if regime == Regime::Intra {
        if let Some(missing) = model.catalog.names().iter().find(|n| !data.catalog().contains(n)) {
            return Err(Error::MalformedDataset(format!(
                "feature {missing} of the model is absent from the data; use cross-eval for another domain"
            ))
            .into());
        }
    }
    let aligned = align_to_catalog(&data, &model.catalog);
    let probs = model.predict_dataset(&aligned)?;
    let report = EvalReport::from_scores(
        ReportContext {
            regime,
            model_kind: model.kind,
            train_domain: &args.train_domain,
            test_domain: &args.test_domain,
            k_features: model.width(),
        },
        &probs,
        None,
        &aligned,
    )?;
    let stem = if regime == Regime::Intra { "eval" } else { "cross_eval" };
    let path = out_dir(cli)?.join(format!("{stem}_{}_{}.json", args.test_domain, model.kind));
    write_json(&path, &report)?;
    println!("{TABLE_HEADER}\n{}", report.table_row());
    Ok(())
}

struct ExplainArgs<'a> {
    model: &'a Path,
    input: &'a DataArgs,
    compare: Option<&'a Path>,
    background: Option<&'a Path>,
    background_size: usize,
    top_n: usize,
    max_instances: usize,
    waterfall_top_n: usize,
    instances: &'a [usize],
}

fn head(data: &BinaryDataset, n: usize) -> BinaryDataset {
    let idx: Vec<usize> = (0..data.n_rows().min(n)).collect();
    data.subset(&idx)
}

fn explain(cli: &Cli, a: ExplainArgs<'_>) -> anyhow::Result<()> {
    if a.background_size == 0 || a.top_n == 0 || a.waterfall_top_n == 0 {
        return Err(config_error("explain sizes must be positive"));
    }
    let seed = load_config(cli)?.seed;
    let dir = out_dir(cli)?.join("explain");
    let model = TreeEnsembleModel::load(a.model)?;
    let load = |p: &Path| -> anyhow::Result<BinaryDataset> {
        Ok(align_to_catalog(&load_csv(p, &a.input.label_column)?, &model.catalog))
    };
    let data = load(&a.input.data)?;
    let bg_source = match a.background {
        Some(p) => load(p)?,
        None => data.clone(),
    };
    let bg = BackgroundSet::sample(&bg_source, a.background_size, derive_seed(seed, "background", 0))?;
    let shown = head(&data, a.max_instances);

    let global = global_importance(&model, &shown, &bg, a.top_n)?;
    let mut buf = Vec::new();
    global.write_violin_csv(&mut buf)?;
    write_atomic(&dir.join("violin.csv"), &buf)?;
    write_json(&dir.join("importance.json"), &global.ranking)?;

    if let Some(p) = a.compare {
        let other = head(&load(p)?, a.max_instances);
        let shift = importance_shift(&model, &shown, &other, &bg)?;
        let mut buf = Vec::new();
        shift.write_csv(&mut buf)?;
        write_atomic(&dir.join("shift.csv"), &buf)?;
    }

    let local = archetype_waterfalls(&model, &data, &bg, a.waterfall_top_n, "data")?;
    for arch in &local.archetypes {
        match &arch.reason {
            Some(reason) => eprintln!("{} unavailable: {reason}", arch.archetype.as_str()),
            None => println!("{} explained", arch.archetype.as_str()),
        }
    }
    write_json(&dir.join("waterfalls.json"), &local)?;

    let mut requested = Vec::new();
    for &i in a.instances {
        if i >= data.n_rows() {
            return Err(config_error(format!("instance {i} out of range ({} rows)", data.n_rows())));
        }
        let x = data.row(i);
        let attr = shap_tree(&model, x, &bg)?.with_ids(Some(data.row_ids()[i]), None);
        requested.push(serde_json::json!({
            "row": i,
            "attribution": AttributionExport::new(&attr, &model, x),
            "waterfall": waterfall(&attr, &model.catalog, a.waterfall_top_n)?,
        }));
    }
    if !requested.is_empty() {
        write_json(&dir.join("instances.json"), &requested)?;
    }
    Ok(())
}
