//! Two-stage search: evolve a dense block on the source datasets, then stack
//! it onto the target dataset and pick the widening and deepening factors
//! by exhaustive grid search.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    build_network_with, count_parameters, decode_block, ArchError, BlockSpec, BuildOptions, CodecConfig,
    InputShape, NetworkSpec,
};
use crate::data::{split_train_test, DataError, LabeledImageSet};
use crate::exec::Executor;
use crate::pso::{init_swarm, step_generation, EvalRequest, Evaluation, EvaluationFailed, PsoConfig, Swarm};
use crate::seed::derive_seed;
use crate::surrogate::{
    fit, gate_and_evaluate, ArchivedCurve, FitOptions, GateContext, GateError, GateOutcome,
    PairwiseSurrogateModel, SurrogateError, TrainingCurve, DEFAULT_WINDOW,
};
use crate::trainer::{TrainError, TrainJob, Trainer, TrainingSession};

/// Fraction of each source used for training during fitness evaluation.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationFailed<SourceEvalError>),
    #[error("training {network} failed: {source}")]
    Train {
        network: String,
        #[source]
        source: TrainError,
    },
    #[error("no grid cell could be built")]
    AllCellsInfeasible,
    #[error("the swarm never found a decodable block")]
    NoFeasibleBlock,
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
    #[error("reading report: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SearchError> = std::result::Result<T, E>;

/// A trainer or surrogate failure, tagged with the source it happened on.
#[derive(Debug, Error)]
#[error("on source {source_name}: {error}")]
pub struct SourceEvalError {
    pub source_name: String,
    #[source]
    pub error: GateError,
}

/// One source dataset, already split for fitness evaluation.
#[derive(Debug, Clone)]
pub struct Source {
    pub name: String,
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
    pub weight: f64,
}

impl Source {
    /// Seeded 80/20 split of `set`.
    pub fn split(set: &LabeledImageSet, weight: f64, seed: u64) -> Result<Self> {
        let (train, test) = split_train_test(set, TRAIN_FRACTION, seed)?;
        Ok(Self {
            name: set.name.clone(),
            train,
            test,
            weight,
        })
    }

    fn input_shape(&self) -> InputShape {
        let (c, h, w) = self.train.image_shape();
        InputShape(c, h, w)
    }
}

#[derive(Debug, Clone)]
pub struct SourceConfig {
    pub sources: Vec<Source>,
    pub codec: CodecConfig,
    /// Position bounds are taken from the codec.
    pub pso: PsoConfig,
    pub full_epochs: usize,
    pub window: usize,
    pub build: BuildOptions,
    pub surrogate_lambda: f64,
    pub surrogate_iterations: usize,
    pub seed: u64,
}

impl SourceConfig {
    pub fn new(sources: Vec<Source>, seed: u64) -> Self {
        let fit = FitOptions::default();
        Self {
            sources,
            codec: CodecConfig::default(),
            pso: PsoConfig {
                seed,
                ..PsoConfig::default()
            },
            full_epochs: 50,
            window: DEFAULT_WINDOW,
            build: BuildOptions::default(),
            surrogate_lambda: fit.lambda,
            surrogate_iterations: fit.iterations,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SearchError::InvalidConfig(m));
        if self.sources.is_empty() {
            return bad("at least one source is required".into());
        }
        for s in &self.sources {
            if !(s.weight > 0.0 && s.weight.is_finite()) {
                return bad(format!("source {} has weight {}, must be > 0", s.name, s.weight));
            }
        }
        if self.full_epochs == 0 {
            return bad("full_epochs must be >= 1".into());
        }
        if self.window == 0 {
            return bad("surrogate window must be >= 1".into());
        }
        if !(self.surrogate_lambda > 0.0) || self.surrogate_iterations == 0 {
            return bad("surrogate lambda and iterations must be positive".into());
        }
        self.codec.validate()?;
        self.pso_config()
            .validate()
            .map_err(|e| SearchError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// The window actually used: never longer than a full evaluation.
    pub fn effective_window(&self) -> usize {
        if self.window > self.full_epochs {
            log::warn!(
                "surrogate window {} exceeds full_epochs {}; using {}",
                self.window,
                self.full_epochs,
                self.full_epochs
            );
        }
        self.window.min(self.full_epochs)
    }

    fn pso_config(&self) -> PsoConfig {
        PsoConfig {
            position_bounds: self.codec.position_bounds(),
            ..self.pso.clone()
        }
    }
}

/// `Σ w_i f_i / Σ w_i`.
pub fn combine_fitness(fitnesses: &[f64], weights: &[f64]) -> f64 {
    assert_eq!(fitnesses.len(), weights.len());
    let total: f64 = weights.iter().sum();
    fitnesses.iter().zip(weights).map(|(f, w)| f * w).sum::<f64>() / total
}

fn composite(sources: &[Source], curves: &[TrainingCurve]) -> f64 {
    let f: Vec<f64> = curves.iter().map(|c| c.best_accuracy).collect();
    let w: Vec<f64> = sources.iter().map(|s| s.weight).collect();
    combine_fitness(&f, &w)
}

fn source_network(block: &BlockSpec, source: &Source, build: &BuildOptions) -> Result<NetworkSpec, ArchError> {
    build_network_with(block, 1, 1, source.input_shape(), source.train.num_classes, build)
}

fn start_sessions<'a>(
    sources: &'a [Source],
    specs: &'a [NetworkSpec],
    trainer: &'a dyn Trainer,
    seed: u64,
) -> Result<Vec<Box<dyn TrainingSession + 'a>>, SourceEvalError> {
    sources
        .iter()
        .zip(specs)
        .enumerate()
        .map(|(i, (s, spec))| {
            trainer
                .start(TrainJob {
                    spec,
                    train: &s.train,
                    test: &s.test,
                    seed: derive_seed(seed, "source", i as u64),
                })
                .map_err(|e| SourceEvalError {
                    source_name: s.name.clone(),
                    error: e.into(),
                })
        })
        .collect()
}

/// Full evaluation on every source; the composite is the weighted mean of
/// the per-source best test accuracies.
pub fn weighted_fitness(
    block: &BlockSpec,
    sources: &[Source],
    trainer: &dyn Trainer,
    full_epochs: usize,
    build: &BuildOptions,
    seed: u64,
) -> Result<(f64, Vec<TrainingCurve>)> {
    if sources.is_empty() {
        return Err(SearchError::InvalidConfig("at least one source is required".into()));
    }
    let mut curves = Vec::with_capacity(sources.len());
    for (i, s) in sources.iter().enumerate() {
        let spec = source_network(block, s, build)?;
        let job = TrainJob {
            spec: &spec,
            train: &s.train,
            test: &s.test,
            seed: derive_seed(seed, "source", i as u64),
        };
        let curve = trainer.train(job, full_epochs).map_err(|source| SearchError::Train {
            network: format!("block {:?} on {}", block.growth_rates(), s.name),
            source,
        })?;
        curves.push(curve);
    }
    Ok((composite(sources, &curves), curves))
}

/// What one candidate evaluation produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Full { curves: Vec<TrainingCurve> },
    Gated { epochs: usize },
    DecodeFailed,
}

impl Candidate {
    fn epochs(&self) -> usize {
        match self {
            Candidate::Full { curves } => curves.iter().map(TrainingCurve::len).sum(),
            Candidate::Gated { epochs } => *epochs,
            Candidate::DecodeFailed => 0,
        }
    }
}

/// Where the evaluation budget went.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub population_size: usize,
    pub generations: usize,
    pub full_evaluations: usize,
    pub gated: usize,
    pub decode_failed: usize,
    /// Epochs trained across all sources.
    pub epochs_trained: usize,
    /// Epochs that would have been trained without the surrogate.
    pub epochs_without_gating: usize,
}

impl Ledger {
    pub fn total(&self) -> usize {
        self.full_evaluations + self.gated + self.decode_failed
    }

    pub fn is_conserved(&self) -> bool {
        self.total() == self.population_size * self.generations
    }

    pub fn gating_rate(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.gated as f64 / self.total() as f64
        }
    }
}

/// One row of `evolution_history.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub generation: usize,
    pub global_best_fitness: f64,
    pub mean_fitness: f64,
    pub full_evaluations: usize,
    pub gated: usize,
    pub decode_failed: usize,
    pub surrogate_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Full,
    Gated,
    DecodeFailed,
}

/// One row of `evaluations.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub generation: usize,
    pub particle: usize,
    pub status: EvalStatus,
    pub fitness: f64,
    /// Space-separated growth rates; empty when undecodable.
    pub block: String,
    pub became_personal_best: bool,
    /// Holds the global best at the end of its generation.
    pub became_global_best: bool,
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub best_block: BlockSpec,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<HistoryRow>,
    pub ledger: Ledger,
    pub evaluations: Vec<EvaluationRecord>,
    /// Every full per-source curve, in evaluation order.
    pub archive: Vec<ArchivedCurve>,
    /// The surrogates used in the last generation, one per source.
    pub models: Vec<Option<PairwiseSurrogateModel>>,
}

fn refit_models(
    config: &SourceConfig,
    archive: &[ArchivedCurve],
    window: usize,
    generation: usize,
) -> Vec<Option<PairwiseSurrogateModel>> {
    config
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let curves: Vec<TrainingCurve> = archive
                .iter()
                .filter(|c| c.run_id == s.name)
                .map(|c| c.curve.clone())
                .collect();
            let dataset = match crate::surrogate::build_pair_dataset(&curves, window) {
                Ok(d) => d,
                Err(e) => {
                    log::info!("generation {generation}: no surrogate for {}: {e}", s.name);
                    return None;
                }
            };
            let options = FitOptions {
                lambda: config.surrogate_lambda,
                iterations: config.surrogate_iterations,
                seed: derive_seed(config.seed, "surrogate", (generation * config.sources.len() + i) as u64),
            };
            match fit(&dataset, options) {
                Ok(m) => {
                    log::debug!(
                        "generation {generation}: surrogate for {} fit on {} pairs, train accuracy {:.3}",
                        s.name,
                        dataset.len(),
                        m.train_accuracy
                    );
                    Some(m)
                }
                Err(SurrogateError::SingleClass) | Err(SurrogateError::EmptyDataset) => None,
                Err(e) => {
                    log::warn!("generation {generation}: surrogate fit for {} failed: {e}", s.name);
                    None
                }
            }
        })
        .collect()
}

/// Evolves a block with PSO. Generation 1 always runs full evaluations; from
/// generation 2 on, a surrogate per source is refit on every archived curve
/// and a candidate is fully trained only if every surrogate predicts it
/// beats the particle's personal best.
pub fn evolve_source(config: &SourceConfig, trainer: &dyn Trainer, executor: Executor) -> Result<EvolutionResult> {
    config.validate()?;
    let pso = config.pso_config();
    let window = config.effective_window();
    let sources = &config.sources;
    let mut swarm: Swarm = init_swarm(&pso, config.codec.max_layers);
    let mut archive: Vec<ArchivedCurve> = Vec::new();
    let mut pbest_curves: Vec<Option<Vec<TrainingCurve>>> = vec![None; pso.population_size];
    let mut models: Vec<Option<PairwiseSurrogateModel>> = vec![None; sources.len()];
    let mut ledger = Ledger {
        population_size: pso.population_size,
        generations: pso.generations,
        ..Ledger::default()
    };
    let mut history = Vec::with_capacity(pso.generations);
    let mut evaluations = Vec::with_capacity(pso.population_size * pso.generations);

    for generation in 1..=pso.generations {
        if generation >= 2 {
            models = refit_models(config, &archive, window, generation);
        }
        let active: Option<Vec<PairwiseSurrogateModel>> = models.iter().cloned().collect();
        let pbest = &pbest_curves;
        let evaluate = |req: EvalRequest<'_>| -> Result<Evaluation<Candidate>, SourceEvalError> {
            let block = match decode_block(req.position, &config.codec) {
                Ok(b) => b,
                Err(_) => return Ok(Evaluation::with_payload(0.0, Candidate::DecodeFailed)),
            };
            let specs = sources
                .iter()
                .map(|s| {
                    source_network(&block, s, &config.build).map_err(|e| SourceEvalError {
                        source_name: s.name.clone(),
                        error: GateError::Train(TrainError::Nn(e.into())),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let seed = derive_seed(config.seed, "evaluate", (req.generation * pso.population_size + req.particle) as u64);
            let mut sessions = start_sessions(sources, &specs, trainer, seed)?;
            let context = match (&active, &pbest[req.particle]) {
                (Some(m), Some(inc)) => Some(GateContext {
                    models: m,
                    incumbents: inc,
                }),
                _ => None,
            };
            let outcome = gate_and_evaluate(context, &mut sessions, config.full_epochs).map_err(|error| {
                // attribute the failure to the first session that did not finish
                let i = sessions
                    .iter()
                    .position(|s| s.epochs_done() < config.full_epochs)
                    .unwrap_or(0);
                SourceEvalError {
                    source_name: sources[i].name.clone(),
                    error,
                }
            })?;
            Ok(match outcome {
                GateOutcome::Evaluated(curves) => {
                    Evaluation::with_payload(composite(sources, &curves), Candidate::Full { curves })
                }
                GateOutcome::Gated(prefixes) => Evaluation::gated(Candidate::Gated {
                    epochs: prefixes.iter().map(TrainingCurve::len).sum(),
                }),
            })
        };
        let outcome = step_generation(&mut swarm, &pso, executor, evaluate)?;

        let mut row = HistoryRow {
            generation,
            global_best_fitness: swarm.global_best_fitness,
            mean_fitness: outcome.evaluations.iter().map(|e| e.fitness).sum::<f64>()
                / outcome.evaluations.len() as f64,
            full_evaluations: 0,
            gated: 0,
            decode_failed: 0,
            surrogate_active: active.is_some(),
        };
        for (i, eval) in outcome.evaluations.into_iter().enumerate() {
            ledger.epochs_trained += eval.payload.epochs();
            let block = decode_block(&swarm.particles[i].position, &config.codec)
                .map(|b| {
                    b.growth_rates()
                        .iter()
                        .map(|g| g.to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .unwrap_or_default();
            evaluations.push(EvaluationRecord {
                generation,
                particle: i,
                status: match eval.payload {
                    Candidate::Full { .. } => EvalStatus::Full,
                    Candidate::Gated { .. } => EvalStatus::Gated,
                    Candidate::DecodeFailed => EvalStatus::DecodeFailed,
                },
                fitness: eval.fitness,
                block,
                became_personal_best: outcome.personal_improved[i],
                became_global_best: outcome.global_improved_by == Some(i),
            });
            match eval.payload {
                Candidate::Full { curves } => {
                    row.full_evaluations += 1;
                    ledger.epochs_without_gating += config.full_epochs * sources.len();
                    for (s, c) in sources.iter().zip(&curves) {
                        archive.push(ArchivedCurve {
                            run_id: s.name.clone(),
                            particle_id: i,
                            generation,
                            curve: c.clone(),
                        });
                    }
                    if outcome.personal_improved[i] {
                        pbest_curves[i] = Some(curves);
                    }
                }
                Candidate::Gated { .. } => {
                    row.gated += 1;
                    ledger.epochs_without_gating += config.full_epochs * sources.len();
                }
                Candidate::DecodeFailed => {
                    row.decode_failed += 1;
                    if outcome.personal_improved[i] {
                        pbest_curves[i] = None;
                    }
                }
            }
        }
        ledger.full_evaluations += row.full_evaluations;
        ledger.gated += row.gated;
        ledger.decode_failed += row.decode_failed;
        log::info!(
            "generation {generation}: best {:.4}, {} full, {} gated, {} undecodable",
            row.global_best_fitness,
            row.full_evaluations,
            row.gated,
            row.decode_failed
        );
        history.push(row);
    }

    let best_block = decode_block(&swarm.global_best_position, &config.codec).map_err(|_| SearchError::NoFeasibleBlock)?;
    Ok(EvolutionResult {
        best_block,
        best_position: swarm.global_best_position,
        best_fitness: swarm.global_best_fitness,
        history,
        ledger,
        evaluations,
        archive,
        models,
    })
}

/// Train and held-out sets for the target domain.
#[derive(Debug, Clone)]
pub struct Target {
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
}

impl Target {
    /// Seeded 80/20 split for targets without their own test set.
    pub fn split(set: &LabeledImageSet, seed: u64) -> Result<Self> {
        let (train, test) = split_train_test(set, TRAIN_FRACTION, seed)?;
        Ok(Self { train, test })
    }

    fn input_shape(&self) -> InputShape {
        let (c, h, w) = self.train.image_shape();
        InputShape(c, h, w)
    }
}

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub widen_range: (usize, usize),
    pub deepen_range: (usize, usize),
    pub target: Target,
    pub eval_epochs: usize,
    pub build: BuildOptions,
    pub seed: u64,
}

impl GridConfig {
    pub fn new(target: Target, eval_epochs: usize, seed: u64) -> Self {
        Self {
            widen_range: (1, 3),
            deepen_range: (2, 5),
            target,
            eval_epochs,
            build: BuildOptions::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("widen_range", self.widen_range), ("deepen_range", self.deepen_range)] {
            if lo == 0 || lo > hi {
                return Err(SearchError::InvalidConfig(format!(
                    "{name} [{lo}, {hi}] must be non-empty with lower bound >= 1"
                )));
            }
        }
        if self.eval_epochs == 0 {
            return Err(SearchError::InvalidConfig("eval_epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Every (widen, deepen) cell, widen-major.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let (w0, w1) = self.widen_range;
        let (d0, d1) = self.deepen_range;
        (w0..=w1).flat_map(|w| (d0..=d1).map(move |d| (w, d))).collect()
    }
}

/// One row of `grid_table.csv`. Infeasible cells have no accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub widen: usize,
    pub deepen: usize,
    pub accuracy: Option<f64>,
    pub params: Option<usize>,
    pub note: String,
}

/// Wall-clock cost of one grid cell, kept apart from the reproducible table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTiming {
    pub widen: usize,
    pub deepen: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best_widen: usize,
    pub best_deepen: usize,
    pub best_accuracy: f64,
    pub network: NetworkSpec,
    pub table: Vec<GridRow>,
    pub timings: Vec<GridTiming>,
}

/// Trains the stacked network in every cell and keeps the most accurate;
/// ties go to fewer parameters, then smaller widen, then smaller deepen.
pub fn grid_search_target(
    block: &BlockSpec,
    grid: &GridConfig,
    trainer: &dyn Trainer,
    executor: Executor,
) -> Result<GridResult> {
    grid.validate()?;
    let target = &grid.target;
    let cells = grid.cells();
    let evaluated = executor.try_map(&cells, |i, &(w, d)| -> Result<(GridRow, Option<NetworkSpec>, GridTiming)> {
        let started = Instant::now();
        let spec = match build_network_with(block, w, d, target.input_shape(), target.train.num_classes, &grid.build) {
            Ok(s) => s,
            Err(e) => {
                let row = GridRow {
                    widen: w,
                    deepen: d,
                    accuracy: None,
                    params: None,
                    note: format!("infeasible: {e}"),
                };
                return Ok((row, None, GridTiming { widen: w, deepen: d, seconds: 0.0 }));
            }
        };
        let job = TrainJob {
            spec: &spec,
            train: &target.train,
            test: &target.test,
            seed: derive_seed(grid.seed, "grid", i as u64),
        };
        let curve = trainer.train(job, grid.eval_epochs).map_err(|source| SearchError::Train {
            network: format!("grid cell widen={w} deepen={d}"),
            source,
        })?;
        let row = GridRow {
            widen: w,
            deepen: d,
            accuracy: Some(curve.best_accuracy),
            params: Some(count_parameters(&spec)),
            note: String::new(),
        };
        let timing = GridTiming {
            widen: w,
            deepen: d,
            seconds: started.elapsed().as_secs_f64(),
        };
        Ok((row, Some(spec), timing))
    })?;

    let mut best: Option<(usize, f64, usize)> = None;
    for (i, (row, _, _)) in evaluated.iter().enumerate() {
        let (Some(acc), Some(params)) = (row.accuracy, row.params) else {
            continue;
        };
        // cells are visited widen-major, so an earlier cell wins a full tie
        let better = match best {
            None => true,
            Some((_, a, p)) => acc > a || (acc == a && params < p),
        };
        if better {
            best = Some((i, acc, params));
        }
    }
    let (i, best_accuracy, _) = best.ok_or(SearchError::AllCellsInfeasible)?;
    let mut table = Vec::with_capacity(evaluated.len());
    let mut timings = Vec::with_capacity(evaluated.len());
    let mut network = None;
    for (j, (row, spec, timing)) in evaluated.into_iter().enumerate() {
        if j == i {
            network = spec;
        }
        table.push(row);
        timings.push(timing);
    }
    let network = network.expect("best cell has a network");
    Ok(GridResult {
        best_widen: network.widen,
        best_deepen: network.deepen,
        best_accuracy,
        network,
        table,
        timings,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub evolution: EvolutionResult,
    pub grid: GridResult,
    pub evolve_seconds: f64,
    pub grid_seconds: f64,
}

impl PipelineResult {
    pub fn network(&self) -> &NetworkSpec {
        &self.grid.network
    }
}

/// Evolution on the sources, then grid search on the target with the
/// evolved block. Use [`grid_search_target`] directly to transfer one
/// evolved block to further targets.
pub fn run_pipeline(
    source: &SourceConfig,
    grid: &GridConfig,
    trainer: &dyn Trainer,
    executor: Executor,
) -> Result<PipelineResult> {
    grid.validate()?;
    let t = Instant::now();
    let evolution = evolve_source(source, trainer, executor)?;
    let evolve_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let grid = grid_search_target(&evolution.best_block, grid, trainer, executor)?;
    Ok(PipelineResult {
        evolution,
        grid,
        evolve_seconds,
        grid_seconds: t.elapsed().as_secs_f64(),
    })
}

/// Trains `spec` on `train` for `epochs` and returns the last-epoch
/// accuracy on `held_out`; nothing is selected on the held-out set.
pub fn holdout_accuracy(
    spec: &NetworkSpec,
    train: &LabeledImageSet,
    held_out: &LabeledImageSet,
    epochs: usize,
    trainer: &dyn Trainer,
    seed: u64,
) -> Result<f64> {
    let job = TrainJob {
        spec,
        train,
        test: held_out,
        seed,
    };
    let curve = trainer.train(job, epochs).map_err(|source| SearchError::Train {
        network: format!("held-out evaluation of {}", spec.to_json()),
        source,
    })?;
    Ok(*curve.accuracies.last().expect("epochs >= 1"))
}

pub const BLOCK_FILE: &str = "block.json";
pub const NETWORK_FILE: &str = "network.json";
pub const GRID_FILE: &str = "grid_table.csv";
pub const GRID_TIMINGS_FILE: &str = "grid_timings.csv";
pub const HISTORY_FILE: &str = "evolution_history.csv";
pub const EVALUATIONS_FILE: &str = "evaluations.csv";
pub const LEDGER_FILE: &str = "ledger.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LedgerReport {
    #[serde(flatten)]
    ledger: Ledger,
    gating_rate: f64,
    best_fitness: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Writes the evolution artefacts into `dir`.
pub fn write_evolution_report(dir: &Path, result: &EvolutionResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(BLOCK_FILE), result.best_block.to_json() + "\n")?;
    write_csv(&dir.join(HISTORY_FILE), &result.history)?;
    write_csv(&dir.join(EVALUATIONS_FILE), &result.evaluations)?;
    let ledger = LedgerReport {
        ledger: result.ledger.clone(),
        gating_rate: result.ledger.gating_rate(),
        best_fitness: result.best_fitness,
    };
    fs::write(dir.join(LEDGER_FILE), serde_json::to_string_pretty(&ledger)? + "\n")?;
    let file = fs::File::create(dir.join(CURVES_FILE))?;
    crate::surrogate::write_curves_csv(&result.archive, std::io::BufWriter::new(file))?;
    for (i, m) in result.models.iter().enumerate() {
        if let Some(m) = m {
            fs::write(dir.join(format!("surrogate_{i}.json")), m.to_json() + "\n")?;
        }
    }
    Ok(())
}

/// Writes the grid-search artefacts into `dir`.
pub fn write_grid_report(dir: &Path, result: &GridResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(NETWORK_FILE), result.network.to_json() + "\n")?;
    write_csv(&dir.join(GRID_FILE), &result.table)?;
    write_csv(&dir.join(GRID_TIMINGS_FILE), &result.timings)?;
    Ok(())
}

pub fn write_pipeline_report(dir: &Path, result: &PipelineResult) -> Result<()> {
    write_evolution_report(dir, &result.evolution)?;
    write_grid_report(dir, &result.grid)?;
    let timings = serde_json::json!({
        "evolve_seconds": result.evolve_seconds,
        "grid_seconds": result.grid_seconds,
    });
    fs::write(dir.join(TIMINGS_FILE), serde_json::to_string_pretty(&timings)? + "\n")?;
    Ok(())
}

/// What a run directory contains, as far as it could be read.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub block: Option<BlockSpec>,
    pub network: Option<NetworkSpec>,
    pub history: Vec<HistoryRow>,
    pub ledger: Option<Ledger>,
    pub grid: Vec<GridRow>,
}

impl RunSummary {
    /// The grid row the search selected, if a grid was run.
    pub fn grid_best(&self) -> Option<&GridRow> {
        let net = self.network.as_ref()?;
        self.grid
            .iter()
            .find(|r| r.widen == net.widen && r.deepen == net.deepen)
    }
}

/// Reads whatever artefacts exist in `dir`; never writes.
pub fn read_run_dir(dir: &Path) -> Result<RunSummary> {
    if !dir.is_dir() {
        return Err(SearchError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", dir.display()),
        )));
    }
    let mut s = RunSummary::default();
    let p = dir.join(BLOCK_FILE);
    if p.exists() {
        s.block = Some(serde_json::from_str(&fs::read_to_string(p)?)?);
    }
    let p = dir.join(NETWORK_FILE);
    if p.exists() {
        s.network = Some(serde_json::from_str(&fs::read_to_string(p)?)?);
    }
    let p = dir.join(HISTORY_FILE);
    if p.exists() {
        s.history = read_csv(&p)?;
    }
    let p = dir.join(LEDGER_FILE);
    if p.exists() {
        let r: LedgerReport = serde_json::from_str(&fs::read_to_string(p)?)?;
        s.ledger = Some(r.ledger);
    }
    let p = dir.join(GRID_FILE);
    if p.exists() {
        s.grid = read_csv(&p)?;
    }
    Ok(s)
}
