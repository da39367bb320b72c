//! Minibatch Adam training loops and evaluation.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::row_to_vertices;
use super::{adam_step, argmax_rows, cross_entropy_loss, AdamConfig, EncoderInput, Model, Task};
use crate::datasets::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::varifold::{self, DiscreteVarifold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    /// After each epoch, reset batch-norm running statistics to the exact
    /// population statistics of the training set. Without this, a unit that
    /// was inactive for many steps keeps a running variance near zero and
    /// explodes in eval mode once it starts firing.
    #[serde(default = "default_true")]
    pub recalibrate_batch_norm: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            epochs: 50,
            learning_rate: 1e-3,
            rng_seed: 0,
            recalibrate_batch_norm: true,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the metrics log. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    /// Accuracy for classifiers, mean squared varifold error for autoencoders.
    pub accuracy_or_error: f64,
    pub seconds_per_batch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    /// Median over epochs of the mean wall-clock time per optimizer step.
    pub median_seconds_per_batch: f64,
}

pub const CSV_HEADER: &str = "epoch,split,loss,accuracy_or_error,seconds_per_batch";

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for m in &self.metrics {
            let split = match m.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                m.epoch, split, m.loss, m.accuracy_or_error, m.seconds_per_batch
            );
        }
        s
    }

    pub fn last(&self, split: Split) -> Option<&EpochMetrics> {
        self.metrics.iter().rev().find(|m| m.split == split)
    }

    pub fn first(&self, split: Split) -> Option<&EpochMetrics> {
        self.metrics.iter().find(|m| m.split == split)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Shapes(Vec<DiscreteVarifold>),
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Shapes(s) => s.len(),
        }
    }
}

/// Encoder inputs and training targets for a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub inputs: Vec<EncoderInput>,
    pub targets: Targets,
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn new(model: &Model, ds: &LabeledDataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let targets = match model.config.task {
            Task::Classifier => {
                let labels = ds.labels()?;
                if let Some(&bad) = labels.iter().find(|&&l| l >= model.config.class_count) {
                    return Err(Error::LabelOutOfRange {
                        label: bad,
                        classes: model.config.class_count,
                    });
                }
                Targets::Labels(labels)
            }
            Task::Autoencoder => Targets::Shapes(
                ds.shapes
                    .par_iter()
                    .map(varifold::lift)
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(PreparedSet {
            inputs: model.prepare_all(&ds.shapes)?,
            targets,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy_or_error: f64,
}

/// Mean loss and vertex gradients (already divided by the batch size).
fn recon_batch(model: &Model, out: &Array2<f64>, targets: &[&DiscreteVarifold]) -> (f64, Array2<f64>) {
    let edges = &model.template.shape().edges;
    let per_row: Vec<(f64, Vec<[f64; 3]>)> = targets
        .par_iter()
        .enumerate()
        .map(|(r, t)| {
            let v = row_to_vertices(out.row(r).as_slice().expect("contiguous row"));
            varifold::recon_loss_and_grad(&v, edges, t, &model.kernel)
        })
        .collect();
    let b = out.nrows() as f64;
    let mut grad = Array2::zeros(out.raw_dim());
    let mut loss = 0.0;
    for (r, (l, g)) in per_row.iter().enumerate() {
        loss += l;
        for (c, x) in g.iter().flatten().enumerate() {
            grad[[r, c]] = x / b;
        }
    }
    (loss / b, grad)
}

/// Eval-mode loss and accuracy (or reconstruction error) over a prepared set.
pub fn evaluate(model: &Model, set: &PreparedSet) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let out = model.forward_eval(&set.inputs)?;
    Ok(match &set.targets {
        Targets::Labels(labels) => {
            let (loss, _) = cross_entropy_loss(&out, labels)?;
            let hits = argmax_rows(&out).iter().zip(labels).filter(|(p, l)| p == l).count();
            Evaluation {
                loss,
                accuracy_or_error: hits as f64 / labels.len() as f64,
            }
        }
        Targets::Shapes(shapes) => {
            let refs: Vec<_> = shapes.iter().collect();
            let (loss, _) = recon_batch(model, &out, &refs);
            Evaluation {
                loss,
                accuracy_or_error: loss,
            }
        }
    })
}

pub fn evaluate_dataset(model: &Model, ds: &LabeledDataset) -> Result<Evaluation> {
    evaluate(model, &PreparedSet::new(model, ds)?)
}

pub fn train_classifier(
    model: &mut Model,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if model.config.task != Task::Classifier {
        return Err(Error::InvalidConfig("model is not a classifier".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.class_sizes()?.len() < 2 {
        return Err(Error::SingleClass);
    }
    let train_set = PreparedSet::new(model, train)?;
    let test_set = test.map(|t| PreparedSet::new(model, t)).transpose()?;
    train_prepared(model, &train_set, test_set.as_ref(), config)
}

/// Trains to minimize the mean squared varifold distance between the decoded
/// shape and the input. Encoder inputs are constants (no gradient flows into
/// the varifold featurization).
pub fn train_autoencoder(
    model: &mut Model,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if model.config.task != Task::Autoencoder {
        return Err(Error::InvalidConfig("model is not an autoencoder".into()));
    }
    let train_set = PreparedSet::new(model, train)?;
    let test_set = test.map(|t| PreparedSet::new(model, t)).transpose()?;
    train_prepared(model, &train_set, test_set.as_ref(), config)
}

/// The shared loop. Batches of a single sample are skipped when the set has
/// more than one (batch statistics are undefined for them).
pub fn train_prepared(
    model: &mut Model,
    train: &PreparedSet,
    test: Option<&PreparedSet>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.check()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.targets.len() != train.len() {
        return Err(Error::DimensionMismatch {
            what: "targets",
            expected: train.len(),
            got: train.targets.len(),
        });
    }
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut metrics = Vec::new();
    let log = |model: &Model, epoch: usize, secs: f64, metrics: &mut Vec<EpochMetrics>| -> Result<()> {
        for (split, set) in [(Split::Train, Some(train)), (Split::Test, test)] {
            if let Some(set) = set {
                let e = evaluate(model, set)?;
                metrics.push(EpochMetrics {
                    epoch,
                    split,
                    loss: e.loss,
                    accuracy_or_error: e.accuracy_or_error,
                    seconds_per_batch: secs,
                });
            }
        }
        Ok(())
    };
    log(model, 0, 0.0, &mut metrics)?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_times = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut spent = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() == 1 && train.len() > 1 {
                continue;
            }
            let start = Instant::now();
            let inputs: Vec<EncoderInput> = chunk.iter().map(|&i| train.inputs[i].clone()).collect();
            model.zero_grad();
            let out = model.forward_train(&inputs)?;
            let (_, d_out) = match &train.targets {
                Targets::Labels(labels) => {
                    let batch: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    cross_entropy_loss(&out, &batch)?
                }
                Targets::Shapes(shapes) => {
                    let batch: Vec<&DiscreteVarifold> = chunk.iter().map(|&i| &shapes[i]).collect();
                    recon_batch(model, &out, &batch)
                }
            };
            model.backward(&d_out);
            let mut state = std::mem::take(&mut model.optimizer);
            adam_step(&mut model.params_mut(), &mut state, &adam);
            model.optimizer = state;
            spent += start.elapsed().as_secs_f64();
            steps += 1;
        }
        if config.recalibrate_batch_norm {
            let features = model.encode(&train.inputs)?;
            model.head.recalibrate_batch_norm(&features);
        }
        let secs = if steps > 0 { spent / steps as f64 } else { 0.0 };
        epoch_times.push(secs);
        log(model, epoch, secs, &mut metrics)?;
    }
    Ok(TrainReport {
        metrics,
        median_seconds_per_batch: median(&mut epoch_times),
    })
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
