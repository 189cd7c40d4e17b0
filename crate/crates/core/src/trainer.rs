//! The training seam between the search and the network code. The search
//! only sees curves, so tests can inject cheap deterministic trainers.

use thiserror::Error;

use crate::arch::NetworkSpec;
use crate::data::LabeledImageSet;
use crate::nn::{NnError, TrainOptions, TrainingRun};
use crate::surrogate::TrainingCurve;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, Copy)]
pub struct TrainJob<'a> {
    pub spec: &'a NetworkSpec,
    pub train: &'a LabeledImageSet,
    pub test: &'a LabeledImageSet,
    pub seed: u64,
}

/// A training run that can be extended epoch by epoch. Training for `a`
/// epochs and then `b` more must give the same curve as `a + b` at once.
pub trait TrainingSession {
    fn advance(&mut self, epochs: usize) -> Result<(), TrainError>;
    fn curve(&self) -> &TrainingCurve;

    fn epochs_done(&self) -> usize {
        self.curve().len()
    }

    fn advance_to(&mut self, epochs: usize) -> Result<(), TrainError> {
        let done = self.epochs_done();
        if epochs > done {
            self.advance(epochs - done)?;
        }
        Ok(())
    }
}

pub trait Trainer: Sync {
    fn start<'a>(&'a self, job: TrainJob<'a>) -> Result<Box<dyn TrainingSession + 'a>, TrainError>;

    fn train(&self, job: TrainJob<'_>, epochs: usize) -> Result<TrainingCurve, TrainError> {
        let mut session = self.start(job)?;
        session.advance(epochs)?;
        Ok(session.curve().clone())
    }
}

/// Trains the real network with minibatch Adam.
#[derive(Debug, Clone, Default)]
pub struct CnnTrainer {
    pub options: TrainOptions,
}

impl CnnTrainer {
    pub fn new(options: TrainOptions) -> Self {
        Self { options }
    }
}

impl TrainingSession for TrainingRun<'_> {
    fn advance(&mut self, epochs: usize) -> Result<(), TrainError> {
        TrainingRun::advance(self, epochs).map_err(TrainError::from)
    }

    fn curve(&self) -> &TrainingCurve {
        TrainingRun::curve(self)
    }
}

impl Trainer for CnnTrainer {
    fn start<'a>(&'a self, job: TrainJob<'a>) -> Result<Box<dyn TrainingSession + 'a>, TrainError> {
        let run = TrainingRun::new(job.spec, job.train, job.test, self.options, job.seed)?;
        Ok(Box::new(run))
    }
}
