//! Inertia-weight particle swarm optimisation over fixed-length real vectors.
//!
//! Fitness is maximised. All movement randomness for a generation is drawn
//! serially from a stream derived from `(seed, generation)` before any
//! evaluation is dispatched, and best-position updates are applied at the
//! generation barrier in particle order, so evaluations may run concurrently
//! without affecting the trajectory.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Executor;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    pub inertia: f64,
    pub c1: f64,
    pub c2: f64,
    pub v_clamp: f64,
    pub position_bounds: (f64, f64),
    pub population_size: usize,
    pub generations: usize,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            inertia: 0.7298,
            c1: 1.49618,
            c2: 1.49618,
            v_clamp: 12.5,
            position_bounds: (1.0, 32.0),
            population_size: 30,
            generations: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid PSO config: {field} {reason}")]
pub struct InvalidConfig {
    pub field: &'static str,
    pub reason: &'static str,
}

impl PsoConfig {
    pub fn validate(&self) -> Result<(), InvalidConfig> {
        let fail = |field, reason| Err(InvalidConfig { field, reason });
        if !(self.inertia >= 0.0) {
            return fail("inertia", "must be >= 0");
        }
        if !(self.c1 >= 0.0) {
            return fail("c1", "must be >= 0");
        }
        if !(self.c2 >= 0.0) {
            return fail("c2", "must be >= 0");
        }
        if !(self.v_clamp > 0.0) {
            return fail("v_clamp", "must be > 0");
        }
        let (lo, hi) = self.position_bounds;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return fail("position_bounds", "must satisfy lo < hi");
        }
        if self.population_size == 0 {
            return fail("population_size", "must be >= 1");
        }
        if self.generations == 0 {
            return fail("generations", "must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    pub current_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub global_best_position: Vec<f64>,
    pub global_best_fitness: f64,
    /// Completed generations.
    pub generation: usize,
}

impl Swarm {
    pub fn dim(&self) -> usize {
        self.global_best_position.len()
    }

    pub fn has_global_best(&self) -> bool {
        self.global_best_fitness > f64::NEG_INFINITY
    }
}

/// Positions uniform in the bounds, velocities uniform in ±v_clamp; nothing
/// evaluated yet.
pub fn init_swarm(config: &PsoConfig, dim: usize) -> Swarm {
    assert!(dim >= 1, "swarm dimension must be >= 1");
    let mut rng = rng_for(config.seed, "pso-init", 0);
    let (lo, hi) = config.position_bounds;
    let particles = (0..config.population_size)
        .map(|_| {
            let position: Vec<f64> = (0..dim).map(|_| rng.gen_range(lo..=hi)).collect();
            let velocity: Vec<f64> = (0..dim)
                .map(|_| rng.gen_range(-config.v_clamp..=config.v_clamp))
                .collect();
            Particle {
                best_position: position.clone(),
                position,
                velocity,
                best_fitness: f64::NEG_INFINITY,
                current_fitness: f64::NEG_INFINITY,
            }
        })
        .collect::<Vec<_>>();
    Swarm {
        global_best_position: particles[0].position.clone(),
        particles,
        global_best_fitness: f64::NEG_INFINITY,
        generation: 0,
    }
}

/// One velocity and position update. Draws exactly `2 * dim` uniforms from
/// `rng`, r1 then r2 for each dimension in turn.
pub fn update_particle<R: Rng + ?Sized>(
    particle: &Particle,
    global_best: &[f64],
    config: &PsoConfig,
    rng: &mut R,
) -> Particle {
    let (lo, hi) = config.position_bounds;
    let dim = particle.position.len();
    debug_assert_eq!(global_best.len(), dim);
    let mut position = Vec::with_capacity(dim);
    let mut velocity = Vec::with_capacity(dim);
    for d in 0..dim {
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let (v, r) = move_dimension(
            particle.position[d],
            particle.velocity[d],
            particle.best_position[d],
            global_best[d],
            r1,
            r2,
            config,
        );
        velocity.push(v);
        position.push(r.clamp(lo, hi));
    }
    Particle {
        position,
        velocity,
        best_position: particle.best_position.clone(),
        best_fitness: particle.best_fitness,
        current_fitness: particle.current_fitness,
    }
}

/// Velocity and unclamped position for one dimension given the random draws.
pub fn move_dimension(
    x: f64,
    v: f64,
    personal_best: f64,
    global_best: f64,
    r1: f64,
    r2: f64,
    config: &PsoConfig,
) -> (f64, f64) {
    let v_new = config.inertia * v
        + config.c1 * r1 * (personal_best - x)
        + config.c2 * r2 * (global_best - x);
    let v_new = v_new.clamp(-config.v_clamp, config.v_clamp);
    (v_new, x + v_new)
}

/// The outcome of evaluating one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<P = ()> {
    pub fitness: f64,
    /// Gated evaluations are recorded but never become a personal or global best.
    pub gated: bool,
    pub payload: P,
}

impl Evaluation<()> {
    pub fn scored(fitness: f64) -> Self {
        Self {
            fitness,
            gated: false,
            payload: (),
        }
    }
}

impl<P> Evaluation<P> {
    pub fn with_payload(fitness: f64, payload: P) -> Self {
        Self {
            fitness,
            gated: false,
            payload,
        }
    }

    pub fn gated(payload: P) -> Self {
        Self {
            fitness: 0.0,
            gated: true,
            payload,
        }
    }
}

/// What a fitness callback is asked to evaluate.
#[derive(Debug, Clone, Copy)]
pub struct EvalRequest<'a> {
    /// 1-based generation being evaluated.
    pub generation: usize,
    pub particle: usize,
    pub position: &'a [f64],
}

#[derive(Debug, Error)]
#[error("fitness evaluation failed in generation {generation}, particle {particle}")]
pub struct EvaluationFailed<E: std::error::Error + 'static> {
    pub generation: usize,
    pub particle: usize,
    #[source]
    pub source: E,
}

#[derive(Debug)]
pub struct GenerationOutcome<P> {
    pub evaluations: Vec<Evaluation<P>>,
    pub personal_improved: Vec<bool>,
    pub global_improved_by: Option<usize>,
}

/// Moves every particle, evaluates the new positions, then applies best
/// updates with strict improvement. The first generation evaluates the
/// initial positions without moving, since no global best exists yet.
///
/// On a callback failure the swarm is left untouched.
pub fn step_generation<P, E, F>(
    swarm: &mut Swarm,
    config: &PsoConfig,
    executor: Executor,
    fitness: F,
) -> Result<GenerationOutcome<P>, EvaluationFailed<E>>
where
    P: Send,
    E: std::error::Error + Send + 'static,
    F: Fn(EvalRequest<'_>) -> Result<Evaluation<P>, E> + Sync + Send,
{
    let generation = swarm.generation + 1;
    let moved: Vec<Particle> = if swarm.generation == 0 {
        swarm.particles.clone()
    } else {
        let mut rng = rng_for(config.seed, "pso-move", generation as u64);
        swarm
            .particles
            .iter()
            .map(|p| update_particle(p, &swarm.global_best_position, config, &mut rng))
            .collect()
    };

    let evaluations = executor
        .try_map(&moved, |i, p| {
            fitness(EvalRequest {
                generation,
                particle: i,
                position: &p.position,
            })
            .map_err(|source| EvaluationFailed {
                generation,
                particle: i,
                source,
            })
        })?;

    let mut personal_improved = vec![false; moved.len()];
    let mut global_improved_by = None;
    for (i, (mut p, eval)) in moved.into_iter().zip(&evaluations).enumerate() {
        p.current_fitness = eval.fitness;
        if !eval.gated && eval.fitness > p.best_fitness {
            p.best_fitness = eval.fitness;
            p.best_position = p.position.clone();
            personal_improved[i] = true;
        }
        if !eval.gated && eval.fitness > swarm.global_best_fitness {
            swarm.global_best_fitness = eval.fitness;
            swarm.global_best_position = p.position.clone();
            global_improved_by = Some(i);
        }
        swarm.particles[i] = p;
    }
    swarm.generation = generation;
    Ok(GenerationOutcome {
        evaluations,
        personal_improved,
        global_improved_by,
    })
}

/// One row of the evolution history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub global_best_fitness: f64,
    pub evaluations_performed: usize,
    pub evaluations_gated: usize,
}

impl GenerationRecord {
    pub fn from_outcome<P>(swarm: &Swarm, outcome: &GenerationOutcome<P>) -> Self {
        let gated = outcome.evaluations.iter().filter(|e| e.gated).count();
        Self {
            generation: swarm.generation,
            global_best_fitness: swarm.global_best_fitness,
            evaluations_performed: outcome.evaluations.len() - gated,
            evaluations_gated: gated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoOutcome {
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<GenerationRecord>,
}

/// Runs exactly `config.generations` generations.
pub fn run_pso_with<P, E, F>(
    config: &PsoConfig,
    dim: usize,
    executor: Executor,
    fitness: F,
) -> Result<PsoOutcome, EvaluationFailed<E>>
where
    P: Send,
    E: std::error::Error + Send + 'static,
    F: Fn(EvalRequest<'_>) -> Result<Evaluation<P>, E> + Sync + Send,
{
    let mut swarm = init_swarm(config, dim);
    let mut history = Vec::with_capacity(config.generations);
    for _ in 0..config.generations {
        let outcome = step_generation(&mut swarm, config, executor, &fitness)?;
        history.push(GenerationRecord::from_outcome(&swarm, &outcome));
    }
    Ok(PsoOutcome {
        best_position: swarm.global_best_position,
        best_fitness: swarm.global_best_fitness,
        history,
    })
}

/// `run_pso_with` for plain scalar objectives.
pub fn run_pso<E, F>(
    config: &PsoConfig,
    dim: usize,
    executor: Executor,
    fitness: F,
) -> Result<PsoOutcome, EvaluationFailed<E>>
where
    E: std::error::Error + Send + 'static,
    F: Fn(&[f64]) -> Result<f64, E> + Sync + Send,
{
    run_pso_with(config, dim, executor, |req| {
        fitness(req.position).map(Evaluation::scored)
    })
}

pub fn write_history_csv<W: Write>(history: &[GenerationRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<GenerationRecord>> {
    csv::Reader::from_reader(input).deserialize().collect()
}
