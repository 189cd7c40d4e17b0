//! The `blockevo` command line.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use blockevo::arch::{BlockSpec, NetworkSpec};
use blockevo::search::{self, RunSummary, SearchError};
use blockevo::trainer::{CnnTrainer, TrainJob, Trainer};
use blockevo::Executor;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{ConfigError, RunConfig};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const OUT_ENV: &str = "BLOCKEVO_OUT";

#[derive(Debug, Parser)]
#[command(name = "blockevo", version, about = "Evolve dense blocks on source datasets and stack them for a target")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve a dense block on the source datasets.
    Evolve(RunArgs),
    /// Grid-search widening and deepening of an evolved block on the target.
    Gridsearch(RunArgs),
    /// Evolve, then grid-search the evolved block.
    Pipeline(RunArgs),
    /// Train one network on the target dataset and print its curve.
    Train(RunArgs),
    /// Summarise a finished run directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; defaults to $BLOCKEVO_OUT/<command>-seed<seed>.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 means one per core.
    #[arg(long, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Evolved block.json (gridsearch).
    #[arg(long, value_name = "PATH")]
    pub block: Option<PathBuf>,
    /// NetworkSpec JSON to train (train).
    #[arg(long, value_name = "PATH")]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directory to summarise.
    pub dir: PathBuf,
    /// Write the per-generation fitness CSV here instead of the summary; `-` is stdout.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Search(_) | CliError::Runtime(_) | CliError::Io(_) => 3,
        }
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Evolve(_) => "evolve",
            Command::Gridsearch(_) => "gridsearch",
            Command::Pipeline(_) => "pipeline",
            Command::Train(_) => "train",
            Command::Report(_) => "report",
        }
    }

    pub fn quiet(&self) -> bool {
        match self {
            Command::Evolve(a) | Command::Gridsearch(a) | Command::Pipeline(a) | Command::Train(a) => a.quiet,
            Command::Report(a) => a.quiet,
        }
    }
}

/// A validated config plus where its artefacts go.
#[derive(Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub out: PathBuf,
    pub executor: Executor,
}

pub fn prepare(command: &str, args: &RunArgs) -> Result<Prepared, CliError> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.parallelism {
        config.parallelism = n;
    }
    let out = match &args.out {
        Some(o) => o.clone(),
        None => {
            let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            root.join(format!("{command}-seed{}", config.seed))
        }
    };
    let threads = match config.parallelism {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    };
    let executor = if threads <= 1 {
        Executor::Sequential
    } else {
        if !blockevo::exec::set_parallelism(threads) {
            log::debug!("worker pool already initialised");
        }
        Executor::Parallel
    };
    Ok(Prepared { config, out, executor })
}

fn echo_config(p: &Prepared) -> Result<(), CliError> {
    fs::create_dir_all(&p.out)?;
    fs::write(p.out.join(RESOLVED_CONFIG_FILE), p.config.to_toml())?;
    Ok(())
}

fn trainer(config: &RunConfig) -> CnnTrainer {
    CnnTrainer::new(config.train_options())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{} is not a valid {what}: {e}", path.display())))
}

pub fn evolve(args: &RunArgs) -> Result<PathBuf, CliError> {
    let p = prepare("evolve", args)?;
    let sources = p.config.source_config()?;
    echo_config(&p)?;
    let result = search::evolve_source(&sources, &trainer(&p.config), p.executor)?;
    search::write_evolution_report(&p.out, &result)?;
    log::info!(
        "best block {:?}, fitness {:.4}, gating rate {:.2}",
        result.best_block.growth_rates(),
        result.best_fitness,
        result.ledger.gating_rate()
    );
    Ok(p.out)
}

pub fn gridsearch(args: &RunArgs) -> Result<PathBuf, CliError> {
    let block_path = args
        .block
        .as_ref()
        .ok_or_else(|| CliError::Usage("gridsearch needs --block PATH".into()))?;
    let block: BlockSpec = read_json(block_path, "block")?;
    let p = prepare("gridsearch", args)?;
    let grid = p.config.grid_config()?;
    echo_config(&p)?;
    let result = search::grid_search_target(&block, &grid, &trainer(&p.config), p.executor)?;
    search::write_grid_report(&p.out, &result)?;
    fs::write(p.out.join(search::BLOCK_FILE), block.to_json() + "\n")?;
    log::info!(
        "best widen {} deepen {}, accuracy {:.4}",
        result.best_widen,
        result.best_deepen,
        result.best_accuracy
    );
    Ok(p.out)
}

pub fn pipeline(args: &RunArgs) -> Result<PathBuf, CliError> {
    let p = prepare("pipeline", args)?;
    let sources = p.config.source_config()?;
    let grid = p.config.grid_config()?;
    echo_config(&p)?;
    let result = search::run_pipeline(&sources, &grid, &trainer(&p.config), p.executor)?;
    search::write_pipeline_report(&p.out, &result)?;
    log::info!(
        "block {:?} stacked widen {} deepen {}, target accuracy {:.4}",
        result.evolution.best_block.growth_rates(),
        result.grid.best_widen,
        result.grid.best_deepen,
        result.grid.best_accuracy
    );
    Ok(p.out)
}

/// Trains the network on the target data; returns the curve as CSV.
pub fn train(args: &RunArgs) -> Result<String, CliError> {
    let net_path = args
        .network
        .as_ref()
        .ok_or_else(|| CliError::Usage("train needs --network PATH".into()))?;
    let spec: NetworkSpec = read_json(net_path, "network")?;
    spec.validate()
        .map_err(|e| CliError::Usage(format!("{}: {e}", net_path.display())))?;
    let p = prepare("train", args)?;
    let target = p.config.target()?;
    let (c, h, w) = target.train.image_shape();
    if (spec.input_shape.0, spec.input_shape.1, spec.input_shape.2) != (c, h, w)
        || spec.num_classes != target.train.num_classes
    {
        return Err(CliError::Usage(format!(
            "network expects input {:?} and {} classes, target has ({c}, {h}, {w}) and {}",
            spec.input_shape, spec.num_classes, target.train.num_classes
        )));
    }
    let job = TrainJob {
        spec: &spec,
        train: &target.train,
        test: &target.test,
        seed: blockevo::seed::derive_seed(p.config.seed, "train", 0),
    };
    let curve = trainer(&p.config)
        .train(job, p.config.eval_epochs())
        .map_err(|e| CliError::Runtime(format!("training {}: {e}", net_path.display())))?;
    let mut out = String::from("epoch,loss,accuracy\n");
    for (i, (l, a)) in curve.losses.iter().zip(&curve.accuracies).enumerate() {
        writeln!(out, "{},{l},{a}", i + 1).expect("writing to a string");
    }
    Ok(out)
}

pub fn fitness_csv(summary: &RunSummary) -> String {
    let mut out = String::from("generation,global_best_fitness,mean_fitness,full_evaluations,gated,decode_failed\n");
    for r in &summary.history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.generation, r.global_best_fitness, r.mean_fitness, r.full_evaluations, r.gated, r.decode_failed
        )
        .expect("writing to a string");
    }
    out
}

pub fn render_summary(dir: &Path, s: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run: {}", dir.display());
    if let Some(b) = &s.block {
        let _ = writeln!(out, "block: {:?} ({} layers)", b.growth_rates(), b.len());
    }
    if let Some(l) = &s.ledger {
        let _ = writeln!(
            out,
            "evaluations: {} full, {} gated, {} undecodable of {}",
            l.full_evaluations,
            l.gated,
            l.decode_failed,
            l.population_size * l.generations
        );
        let _ = writeln!(out, "gating rate: {:.3}", l.gating_rate());
        let _ = writeln!(
            out,
            "epochs trained: {} of {} without gating",
            l.epochs_trained, l.epochs_without_gating
        );
    }
    if !s.history.is_empty() {
        let _ = writeln!(out, "\n{:>10}  {:>12}  {:>12}  {:>5}  {:>5}", "generation", "best", "mean", "full", "gated");
        for r in &s.history {
            let _ = writeln!(
                out,
                "{:>10}  {:>12.4}  {:>12.4}  {:>5}  {:>5}",
                r.generation, r.global_best_fitness, r.mean_fitness, r.full_evaluations, r.gated
            );
        }
    }
    if !s.grid.is_empty() {
        let _ = writeln!(out, "\n{:>5}  {:>6}  {:>9}  {:>9}", "widen", "deepen", "accuracy", "params");
        for r in &s.grid {
            let acc = r.accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
            let params = r.params.map_or("-".to_string(), |p| p.to_string());
            let _ = writeln!(out, "{:>5}  {:>6}  {:>9}  {:>9}", r.widen, r.deepen, acc, params);
        }
        if let Some(best) = s.grid_best() {
            let _ = writeln!(
                out,
                "grid argmax: widen {} deepen {} accuracy {:.4}",
                best.widen,
                best.deepen,
                best.accuracy.unwrap_or(0.0)
            );
        }
    }
    out
}

/// Reads `args.dir` without modifying it.
pub fn report(args: &ReportArgs) -> Result<String, CliError> {
    let summary = search::read_run_dir(&args.dir).map_err(|e| match e {
        SearchError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => CliError::Usage(e.to_string()),
        other => CliError::Search(other),
    })?;
    match &args.csv {
        Some(p) if p.as_os_str() == "-" => Ok(fitness_csv(&summary)),
        Some(p) => {
            fs::write(p, fitness_csv(&summary))?;
            Ok(render_summary(&args.dir, &summary))
        }
        None => Ok(render_summary(&args.dir, &summary)),
    }
}

/// Runs one command; stdout text on success.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Evolve(a) => evolve(a).map(|d| format!("{}\n", d.display())),
        Command::Gridsearch(a) => gridsearch(a).map(|d| format!("{}\n", d.display())),
        Command::Pipeline(a) => pipeline(a).map(|d| format!("{}\n", d.display())),
        Command::Train(a) => train(a),
        Command::Report(a) => report(a),
    }
}
