//! Evolve dense convolutional blocks with a surrogate-gated particle swarm,
//! then transfer them to a target dataset by widening and stacking.

pub mod arch;
pub mod data;
pub mod exec;
pub mod nn;
pub mod pso;
pub mod search;
pub mod seed;
pub mod surrogate;
pub mod trainer;

pub use exec::Executor;
