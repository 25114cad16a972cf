//! Command-line entry points.

use std::collections::HashMap;
use std::error::Error as StdError;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hast_core::data::{load_dataset, LoadOptions};
use hast_core::engine::RunAggregate;
use hast_core::{run_experiment, Dataset, ExperimentConfig, LearningCurve, Metric, QueryStrategy, SelfTrainingMethod};

use crate::api;
use crate::datasets::{builtin_names, DatasetRegistry};
use crate::plot::{render_svg, Series};
use crate::sessions::SessionStore;

pub type CliResult<T = ()> = Result<T, Box<dyn StdError + Send + Sync>>;

pub const DATA_DIR_ENV: &str = "HAST_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "hast", version, about = "Active learning with class-balanced self-training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run simulated-oracle experiments and write curves to a directory.
    Run(Box<RunArgs>),
    /// Serve live annotation sessions over HTTP.
    Serve(ServeArgs),
    /// Render aggregate files as an SVG learning-curve chart.
    Plot(PlotArgs),
    /// Check a JSONL dataset and print a summary.
    ValidateDataset(DatasetArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Built-in dataset or a dataset directory name under the data dir.
    #[arg(long, conflicts_with = "train")]
    pub dataset: Option<String>,
    /// Training split in JSONL format.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test split in JSONL format.
    #[arg(long, requires = "train")]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// `accuracy` or `macro-f1`.
    #[arg(long, default_value = "accuracy")]
    pub metric: String,
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// JSON config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// random, breaking-ties or contrastive-predictions.
    #[arg(long)]
    pub strategy: Option<String>,
    /// none, hast, verips or threshold.
    #[arg(long)]
    pub self_training: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub label_noise: Option<f64>,
    #[arg(long)]
    pub seed_size: Option<usize>,
    #[arg(long)]
    pub num_queries: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub dynamic_beta: bool,
    #[arg(long)]
    pub no_class_weighting: bool,
    #[arg(long)]
    pub no_down_weighting: bool,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Holds `datasets/<name>/` inputs and `sessions/<id>/` logs.
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// JSON array of `[id, label]` pairs used to answer seed batches.
    #[arg(long)]
    pub seed_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Aggregate files, optionally prefixed with a legend label: `label=path`.
    #[arg(required = true)]
    pub inputs: Vec<String>,
    #[arg(long, default_value = "learning_curve.svg")]
    pub out: PathBuf,
    #[arg(long, default_value = "Learning curve")]
    pub title: String,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run(args) => run_cmd(*args),
        Command::Serve(args) => serve_cmd(args),
        Command::Plot(args) => plot_cmd(args),
        Command::ValidateDataset(args) => validate_cmd(args),
    }
}

fn resolve_dataset(args: &DatasetArgs) -> CliResult<Dataset> {
    let metric: Metric = args.metric.parse()?;
    if let Some(train) = &args.train {
        let name = train
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        let opts = LoadOptions {
            name,
            num_classes: args.num_classes,
            metric,
        };
        return Ok(load_dataset(train, args.test.as_deref(), &opts)?);
    }
    let name = args
        .dataset
        .as_deref()
        .ok_or("either --dataset or --train is required")?;
    let registry = DatasetRegistry::new(args.data_dir.clone());
    match registry.get(name)? {
        Some(ds) => Ok(Arc::unwrap_or_clone(ds)),
        None => Err(format!(
            "unknown dataset `{name}`; built-in datasets: {}",
            builtin_names().join(", ")
        )
        .into()),
    }
}

pub fn build_config(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(path) => {
            let raw = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &args.strategy {
        cfg.query_strategy = s.parse::<QueryStrategy>()?;
    }
    if let Some(s) = &args.self_training {
        cfg.self_training = s.parse::<SelfTrainingMethod>()?;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { cfg.$field = v; })*
        };
    }
    set!(runs => num_runs, seed => rng_seed, label_noise => label_noise, seed_size => seed_size,
         num_queries => num_queries, batch_size => batch_size, beta => beta, k => k,
         iterations => self_train_iterations);
    if args.dynamic_beta {
        cfg.dynamic_beta = true;
    }
    if args.no_class_weighting {
        cfg.class_weighting = false;
    }
    if args.no_down_weighting {
        cfg.pseudo_down_weighting = false;
    }
    Ok(cfg)
}

fn curves_csv(curves: &[LearningCurve]) -> String {
    let mut out = String::from("run,rng_seed,labeled_count,score,pseudo_count\n");
    for (r, c) in curves.iter().enumerate() {
        for p in &c.points {
            out.push_str(&format!("{r},{},{},{},{}\n", c.rng_seed, p.labeled_count, p.score, p.pseudo_count));
        }
    }
    out
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn run_cmd(args: RunArgs) -> CliResult {
    let cfg = build_config(&args)?;
    let ds = resolve_dataset(&args.data)?;
    cfg.validate(ds.train_len())?;
    tracing::info!(
        dataset = %ds.name,
        strategy = %cfg.query_strategy,
        self_training = %cfg.self_training,
        runs = cfg.num_runs,
        "starting experiment"
    );
    let metric = ds.metric;
    let agg = run_experiment(Arc::new(ds), &cfg)?;

    fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    write(&args.out.join("config.json"), serde_json::to_vec_pretty(&cfg)?)?;
    write(&args.out.join("curves.json"), serde_json::to_vec_pretty(&agg.curves)?)?;
    write(&args.out.join("aggregate.json"), serde_json::to_vec_pretty(&agg)?)?;
    write(&args.out.join("curves.csv"), curves_csv(&agg.curves))?;
    let label = format!("{} + {}", cfg.query_strategy, cfg.self_training);
    let svg = render_svg(
        &format!("{label} ({} runs)", agg.num_runs),
        &metric.to_string(),
        &[Series::from_aggregate(label.clone(), &agg)],
    );
    write(&args.out.join("learning_curve.svg"), svg)?;

    println!(
        "{label}: final {metric} {:.4} ± {:.4}, AUC {:.4} ± {:.4} over {} runs",
        agg.final_mean, agg.final_std, agg.auc_mean, agg.auc_std, agg.num_runs
    );
    println!("wrote results to {}", args.out.display());
    Ok(())
}

fn read_seed_labels(path: &Path) -> CliResult<HashMap<usize, usize>> {
    let raw = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let pairs: Vec<(usize, usize)> = serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(pairs.into_iter().collect())
}

fn serve_cmd(args: ServeArgs) -> CliResult {
    let registry = Arc::new(DatasetRegistry::new(args.data_dir.clone()));
    let mut store = SessionStore::new(registry, args.data_dir.clone());
    if let Some(path) = &args.seed_labels {
        store = store.with_seed_labels(read_seed_labels(path)?);
    }
    let loaded = store.load_persisted()?;
    if loaded > 0 {
        tracing::info!(sessions = loaded, "restored persisted sessions");
    }
    let app = api::router(Arc::new(store));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok::<_, Box<dyn StdError + Send + Sync>>(())
    })
}

fn plot_cmd(args: PlotArgs) -> CliResult {
    let mut series = Vec::new();
    let mut y_label = None;
    for input in &args.inputs {
        let (label, path) = match input.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(input);
                let l = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| input.clone());
                (l, p)
            }
        };
        let raw = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let agg: RunAggregate = serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(c) = agg.curves.first() {
            y_label.get_or_insert(c.metric.to_string());
        }
        series.push(Series::from_aggregate(label, &agg));
    }
    let svg = render_svg(&args.title, y_label.as_deref().unwrap_or("score"), &series);
    write(&args.out, svg)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn validate_cmd(args: DatasetArgs) -> CliResult {
    let ds = resolve_dataset(&args)?;
    println!("name: {}", ds.name);
    println!("classes: {}", ds.num_classes);
    println!("dimension: {}", ds.dim);
    println!("train: {}", ds.train_len());
    println!("test: {}", ds.test_instances.len());
    let counts: Vec<String> = ds.class_counts().iter().map(usize::to_string).collect();
    println!("train class counts: {}", counts.join(" "));
    if ds.test_instances.is_empty() {
        println!("warning: no test split; experiments need one");
    }
    Ok(())
}
