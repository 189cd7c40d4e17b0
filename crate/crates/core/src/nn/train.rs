use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamHyper, AdamState, Model, NnError, Result};
use crate::arch::NetworkSpec;
use crate::data::LabeledImageSet;
use crate::seed::rng_for;
use crate::surrogate::TrainingCurve;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub adam: AdamHyper,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            adam: AdamHyper::default(),
            batch_size: 32,
        }
    }
}

const EVAL_BATCH: usize = 256;

/// A resumable training run. Epoch `e` shuffles with a stream derived from
/// `(seed, e)`, so stopping and resuming never changes the trajectory.
#[derive(Debug)]
pub struct TrainingRun<'a> {
    model: Model,
    train: &'a LabeledImageSet,
    test: &'a LabeledImageSet,
    options: TrainOptions,
    seed: u64,
    params: Vec<f64>,
    adam: AdamState,
    curve: TrainingCurve,
}

impl<'a> TrainingRun<'a> {
    pub fn new(
        spec: &NetworkSpec,
        train: &'a LabeledImageSet,
        test: &'a LabeledImageSet,
        options: TrainOptions,
        seed: u64,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(NnError::EmptyDataset("training set"));
        }
        if test.is_empty() {
            return Err(NnError::EmptyDataset("test set"));
        }
        if options.batch_size == 0 {
            return Err(NnError::ShapeMismatch("batch size must be >= 1".into()));
        }
        let model = Model::new(spec)?;
        let params = model.init_params(&mut rng_for(seed, "init", 0));
        let adam = AdamState::new(params.len(), options.adam);
        Ok(Self {
            model,
            train,
            test,
            options,
            seed,
            params,
            adam,
            curve: TrainingCurve::default(),
        })
    }

    pub fn advance(&mut self, epochs: usize) -> Result<()> {
        for _ in 0..epochs {
            let epoch = self.curve.len();
            let loss = self
                .train_epoch(epoch)
                .map_err(|e| match e {
                    NnError::NonFiniteLoss | NnError::NonFinite(_) => NnError::NonFiniteLossAtEpoch(epoch + 1),
                    other => other,
                })?;
            let acc = self.accuracy(self.test)?;
            self.curve.push(loss, acc);
        }
        Ok(())
    }

    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng_for(self.seed, "epoch", epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(self.options.batch_size) {
            let x = self.train.gather(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| self.train.labels[i]).collect();
            let (loss, grad) = self.model.loss_and_grad(&self.params, &x, &labels)?;
            adam_step(&mut self.params, &grad, &mut self.adam);
            total += loss * batch.len() as f64;
        }
        Ok(total / self.train.len() as f64)
    }

    /// Fraction of `set` classified correctly with the current parameters.
    pub fn accuracy(&self, set: &LabeledImageSet) -> Result<f64> {
        let idx: Vec<usize> = (0..set.len()).collect();
        let mut correct = 0usize;
        for chunk in idx.chunks(EVAL_BATCH) {
            let pred = self.model.predict(&self.params, &set.gather(chunk))?;
            correct += pred
                .iter()
                .zip(chunk)
                .filter(|(&p, &i)| p == set.labels[i])
                .count();
        }
        Ok(correct as f64 / set.len() as f64)
    }

    pub fn curve(&self) -> &TrainingCurve {
        &self.curve
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

/// Trains for `epochs` epochs, evaluating on the full test set after each.
pub fn train_and_curve(
    spec: &NetworkSpec,
    train: &LabeledImageSet,
    test: &LabeledImageSet,
    epochs: usize,
    options: TrainOptions,
    seed: u64,
) -> Result<TrainingCurve> {
    if epochs == 0 {
        return Err(NnError::ZeroEpochs);
    }
    let mut run = TrainingRun::new(spec, train, test, options, seed)?;
    run.advance(epochs)?;
    Ok(run.curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_network_with, BlockSpec, BuildOptions, InputShape};
    use crate::data::{split_train_test, synth_blobs};

    fn toy_spec(size: usize) -> NetworkSpec {
        toy_spec_with(size, 4)
    }

    fn toy_spec_with(size: usize, stem_channels: usize) -> NetworkSpec {
        build_network_with(
            &BlockSpec::new(vec![4]).unwrap(),
            1,
            1,
            InputShape(1, size, size),
            2,
            &BuildOptions {
                stem_channels,
                ..BuildOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn records_one_point_per_epoch_and_is_deterministic() {
        let set = synth_blobs(2, 20, 6, 0.2, 1);
        let (tr, te) = split_train_test(&set, 0.8, 2).unwrap();
        let spec = toy_spec(6);
        let a = train_and_curve(&spec, &tr, &te, 3, TrainOptions::default(), 5).unwrap();
        assert_eq!(a.losses.len(), 3);
        assert_eq!(a.accuracies.len(), 3);
        assert_eq!(a.best_accuracy, a.accuracies.iter().copied().fold(0.0, f64::max));
        let b = train_and_curve(&spec, &tr, &te, 3, TrainOptions::default(), 5).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            train_and_curve(&spec, &tr, &te, 0, TrainOptions::default(), 5),
            Err(NnError::ZeroEpochs)
        ));
    }

    #[test]
    fn resuming_matches_a_single_run() {
        let set = synth_blobs(2, 15, 6, 0.2, 3);
        let (tr, te) = split_train_test(&set, 0.8, 2).unwrap();
        let spec = toy_spec(6);
        let mut run = TrainingRun::new(&spec, &tr, &te, TrainOptions::default(), 9).unwrap();
        run.advance(2).unwrap();
        run.advance(2).unwrap();
        let whole = train_and_curve(&spec, &tr, &te, 4, TrainOptions::default(), 9).unwrap();
        assert_eq!(run.curve(), &whole);
    }

    #[test]
    fn learns_separable_blobs() {
        let set = synth_blobs(2, 150, 8, 0.1, 11);
        let (tr, te) = split_train_test(&set, 0.8, 12).unwrap();
        let spec = toy_spec_with(8, 8);
        let curve = train_and_curve(&spec, &tr, &te, 20, TrainOptions::default(), 13).unwrap();
        assert!(curve.best_accuracy >= 0.95, "{curve:?}");
    }
}
