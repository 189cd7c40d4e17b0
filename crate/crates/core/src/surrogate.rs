//! Pairwise learning-curve surrogate.
//!
//! Every ordered pair of archived curves with different final quality becomes
//! one example: the first `W` epochs of losses and accuracies of both curves,
//! labelled +1 when the first curve ends up better. A linear max-margin
//! classifier trained on these examples then decides whether a candidate's
//! short training prefix is worth a full evaluation against the particle's
//! personal best.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;
use crate::trainer::{TrainError, TrainingSession};

/// Default curve prefix length.
pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_LAMBDA: f64 = 1e-3;
pub const DEFAULT_ITERATIONS: usize = 10_000;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurrogateError {
    #[error("need at least 2 curves with distinct best accuracies, got {0}")]
    TooFewCurves(usize),
    #[error("curve {index} has {epochs} epochs, window needs {window}")]
    ShortCurve {
        index: usize,
        epochs: usize,
        window: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset contains a single class")]
    SingleClass,
    #[error("feature length {got} does not match the model's {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
}

pub type Result<T, E = SurrogateError> = std::result::Result<T, E>;

/// Per-epoch training losses and test accuracies of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub losses: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub best_accuracy: f64,
}

impl TrainingCurve {
    pub fn new(losses: Vec<f64>, accuracies: Vec<f64>) -> Result<Self> {
        if losses.is_empty() || losses.len() != accuracies.len() {
            return Err(SurrogateError::InvalidCurve(format!(
                "{} losses and {} accuracies",
                losses.len(),
                accuracies.len()
            )));
        }
        if losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(SurrogateError::InvalidCurve("losses must be finite and >= 0".into()));
        }
        if accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(SurrogateError::InvalidCurve("accuracies must lie in [0, 1]".into()));
        }
        let best_accuracy = accuracies.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            losses,
            accuracies,
            best_accuracy,
        })
    }

    pub fn push(&mut self, loss: f64, accuracy: f64) {
        self.losses.push(loss);
        self.accuracies.push(accuracy);
        self.best_accuracy = if self.accuracies.len() == 1 {
            accuracy
        } else {
            self.best_accuracy.max(accuracy)
        };
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// The first `epochs` epochs as a curve of their own.
    pub fn prefix(&self, epochs: usize) -> TrainingCurve {
        let n = epochs.min(self.len());
        let mut c = TrainingCurve::default();
        for i in 0..n {
            c.push(self.losses[i], self.accuracies[i]);
        }
        c
    }
}

/// `[losses_a, accs_a, losses_b, accs_b]` over the first `window` epochs.
pub fn pair_features(a: &TrainingCurve, b: &TrainingCurve, window: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(4 * window);
    for c in [a, b] {
        f.extend_from_slice(&c.losses[..window]);
        f.extend_from_slice(&c.accuracies[..window]);
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub features: Vec<f64>,
    /// +1 when the first curve's best accuracy is higher, else -1.
    pub label: i8,
}

fn check_window(curves: &[TrainingCurve], window: usize) -> Result<()> {
    for (index, c) in curves.iter().enumerate() {
        if c.len() < window {
            return Err(SurrogateError::ShortCurve {
                index,
                epochs: c.len(),
                window,
            });
        }
    }
    Ok(())
}

/// Both orderings of every pair with distinct best accuracies; ties dropped.
pub fn build_pair_dataset(curves: &[TrainingCurve], window: usize) -> Result<Vec<PairExample>> {
    if curves.len() < 2 {
        return Err(SurrogateError::TooFewCurves(curves.len()));
    }
    check_window(curves, window)?;
    let mut out = Vec::new();
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let (a, b) = (&curves[i], &curves[j]);
            if a.best_accuracy == b.best_accuracy {
                continue;
            }
            let label = if a.best_accuracy > b.best_accuracy { 1 } else { -1 };
            out.push(PairExample {
                features: pair_features(a, b, window),
                label,
            });
            out.push(PairExample {
                features: pair_features(b, a, window),
                label: -label,
            });
        }
    }
    if out.is_empty() {
        return Err(SurrogateError::TooFewCurves(1));
    }
    Ok(out)
}

/// A linear classifier over standardised pair features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSurrogateModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(rename = "means")]
    pub feature_means: Vec<f64>,
    #[serde(rename = "stds")]
    pub feature_stds: Vec<f64>,
    pub window: usize,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
        }
    }
}

/// Hinge-loss linear SVM trained by projected stochastic subgradient descent
/// (Pegasos) on standardised features. The bias is an extra constant feature.
pub fn fit(dataset: &[PairExample], options: FitOptions) -> Result<PairwiseSurrogateModel> {
    let first = dataset.first().ok_or(SurrogateError::EmptyDataset)?;
    if dataset.iter().all(|e| e.label == first.label) {
        return Err(SurrogateError::SingleClass);
    }
    let d = first.features.len();
    if let Some(bad) = dataset.iter().find(|e| e.features.len() != d) {
        return Err(SurrogateError::FeatureLength {
            expected: d,
            got: bad.features.len(),
        });
    }
    let n = dataset.len() as f64;
    let mut means = vec![0.0; d];
    for e in dataset {
        for (m, x) in means.iter_mut().zip(&e.features) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; d];
    for e in dataset {
        for ((s, x), m) in stds.iter_mut().zip(&e.features).zip(&means) {
            *s += (x - m).powi(2);
        }
    }
    stds.iter_mut().for_each(|s| *s = (*s / n).sqrt().max(STD_FLOOR));

    let standardized: Vec<Vec<f64>> = dataset
        .iter()
        .map(|e| standardize(&e.features, &means, &stds))
        .collect();

    let lambda = options.lambda;
    let radius = 1.0 / lambda.sqrt();
    let mut w = vec![0.0; d + 1];
    let mut rng = rng_for(options.seed, "pegasos", 0);
    for t in 1..=options.iterations {
        let u: f64 = rng.gen();
        let i = ((u * n) as usize).min(dataset.len() - 1);
        let x = &standardized[i];
        let y = f64::from(dataset[i].label);
        let eta = 1.0 / (lambda * t as f64);
        let margin = y * (dot(&w[..d], x) + w[d]);
        let shrink = 1.0 - eta * lambda;
        w.iter_mut().for_each(|v| *v *= shrink);
        if margin < 1.0 {
            for (wi, xi) in w.iter_mut().zip(x) {
                *wi += eta * y * xi;
            }
            w[d] += eta * y;
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius {
            let s = radius / norm;
            w.iter_mut().for_each(|v| *v *= s);
        }
    }

    let bias = w[d];
    w.truncate(d);
    let correct = standardized
        .iter()
        .zip(dataset)
        .filter(|(x, e)| (dot(&w, x) + bias > 0.0) == (e.label > 0))
        .count();
    Ok(PairwiseSurrogateModel {
        weights: w,
        bias,
        feature_means: means,
        feature_stds: stds,
        window: d / 4,
        train_accuracy: correct as f64 / n,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn standardize(x: &[f64], means: &[f64], stds: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(means)
        .zip(stds)
        .map(|((v, m), s)| (v - m) / s)
        .collect()
}

impl PairwiseSurrogateModel {
    /// A constant classifier; useful as a fixture.
    pub fn constant(window: usize, bias: f64) -> Self {
        let d = 4 * window;
        Self {
            weights: vec![0.0; d],
            bias,
            feature_means: vec![0.0; d],
            feature_stds: vec![1.0; d],
            window,
            train_accuracy: 0.0,
        }
    }

    pub fn decision(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(SurrogateError::FeatureLength {
                expected: self.weights.len(),
                got: features.len(),
            });
        }
        let x = standardize(features, &self.feature_means, &self.feature_stds);
        Ok(dot(&self.weights, &x) + self.bias)
    }

    pub fn classify(&self, example: &PairExample) -> Result<bool> {
        self.decision(&example.features).map(|v| v > 0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Whether `candidate` is predicted to end up better than `incumbent`.
pub fn predict_better(
    model: &PairwiseSurrogateModel,
    candidate: &TrainingCurve,
    incumbent: &TrainingCurve,
) -> Result<bool> {
    let w = model.window;
    for (index, c) in [candidate, incumbent].into_iter().enumerate() {
        if c.len() < w {
            return Err(SurrogateError::ShortCurve {
                index,
                epochs: c.len(),
                window: w,
            });
        }
    }
    Ok(model.decision(&pair_features(candidate, incumbent, w))? > 0.0)
}

/// Gate inputs for one particle: one model and one personal-best curve per
/// source, in source order.
#[derive(Debug, Clone, Copy)]
pub struct GateContext<'a> {
    pub models: &'a [PairwiseSurrogateModel],
    pub incumbents: &'a [TrainingCurve],
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateOutcome {
    /// Full training ran; one curve per source.
    Evaluated(Vec<TrainingCurve>),
    /// The surrogate predicted no improvement; the short prefixes are kept
    /// for diagnostics only.
    Gated(Vec<TrainingCurve>),
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// Surrogate-assisted evaluation of one candidate across its per-source
/// training sessions.
///
/// Without a context every session trains for `full_epochs`. With one, every
/// session first trains for the model window; only if every per-source model
/// predicts the candidate beats the personal best do the sessions continue
/// to `full_epochs`.
pub fn gate_and_evaluate(
    context: Option<GateContext<'_>>,
    sessions: &mut [Box<dyn TrainingSession + '_>],
    full_epochs: usize,
) -> Result<GateOutcome, GateError> {
    if let Some(ctx) = context {
        assert_eq!(ctx.models.len(), sessions.len(), "one model per source");
        assert_eq!(ctx.incumbents.len(), sessions.len(), "one incumbent per source");
        let mut better = true;
        for ((session, model), incumbent) in sessions.iter_mut().zip(ctx.models).zip(ctx.incumbents) {
            session.advance_to(model.window.min(full_epochs))?;
            if !predict_better(model, session.curve(), incumbent)? {
                better = false;
                break;
            }
        }
        if !better {
            let prefixes = sessions.iter().map(|s| s.curve().clone()).collect();
            return Ok(GateOutcome::Gated(prefixes));
        }
    }
    let mut curves = Vec::with_capacity(sessions.len());
    for session in sessions.iter_mut() {
        session.advance_to(full_epochs)?;
        curves.push(session.curve().clone());
    }
    Ok(GateOutcome::Evaluated(curves))
}

/// One archived curve, tagged by the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchivedCurve {
    pub run_id: String,
    pub particle_id: usize,
    pub generation: usize,
    pub curve: TrainingCurve,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    run_id: String,
    particle_id: usize,
    generation: usize,
    epoch: usize,
    loss: f64,
    accuracy: f64,
}

/// Long format: one row per epoch.
pub fn write_curves_csv<W: Write>(curves: &[ArchivedCurve], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in curves {
        for (epoch, (&loss, &accuracy)) in c.curve.losses.iter().zip(&c.curve.accuracies).enumerate() {
            w.serialize(CurveRow {
                run_id: c.run_id.clone(),
                particle_id: c.particle_id,
                generation: c.generation,
                epoch: epoch + 1,
                loss,
                accuracy,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves_csv<R: Read>(input: R) -> csv::Result<Vec<ArchivedCurve>> {
    let mut out: Vec<ArchivedCurve> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: CurveRow = row?;
        let same = out.last().is_some_and(|c| {
            c.run_id == row.run_id
                && c.particle_id == row.particle_id
                && c.generation == row.generation
                && c.curve.len() + 1 == row.epoch
        });
        if !same {
            out.push(ArchivedCurve {
                run_id: row.run_id.clone(),
                particle_id: row.particle_id,
                generation: row.generation,
                curve: TrainingCurve::default(),
            });
        }
        out.last_mut()
            .expect("just pushed")
            .curve
            .push(row.loss, row.accuracy);
    }
    Ok(out)
}
