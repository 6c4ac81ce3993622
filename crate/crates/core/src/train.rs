//! RMSprop mini-batch training and evaluation.
//!
//! Each batch builds a fresh graph over the current parameters, backpropagates
//! the mean cross-entropy, and applies an RMSprop update in canonical
//! parameter order. All shuffling draws from the shuffle stream of the run
//! seed, so a (seed, corpus, config) triple fixes the entire trajectory.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::encode::EncodedDocument;
use crate::model::{ConfigError, Model, ModelConfig, ModelParams};
use crate::rng;
use crate::tensor::{scalar, to_f64, Scalar, TensorData};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decay of the squared-gradient average.
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 1,
            seed: 0,
            batch_size: 100,
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
}

/// Squared-gradient running average per parameter, in canonical order.
pub struct RmsProp<T: Scalar> {
    cache: Vec<TensorData<T>>,
    learning_rate: T,
    decay: T,
    epsilon: T,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(params: &ModelParams<T>, opts: &TrainOptions) -> Self {
        RmsProp {
            cache: params.named().iter().map(|(_, t)| TensorData::zeros(t.shape().to_vec())).collect(),
            learning_rate: scalar(opts.learning_rate),
            decay: scalar(opts.decay),
            epsilon: scalar(opts.epsilon),
        }
    }

    /// One update: v <- decay v + (1 - decay) g^2; p <- p - lr g / (sqrt(v) + eps).
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &[TensorData<T>]) {
        let named = params.named_mut();
        assert_eq!(named.len(), grads.len(), "gradient list does not match parameter list");
        assert_eq!(named.len(), self.cache.len());
        let one_minus = T::one() - self.decay;
        for ((name, param), (v, g)) in named.into_iter().zip(self.cache.iter_mut().zip(grads)) {
            assert_eq!(param.shape(), g.shape(), "gradient shape mismatch for {name}");
            for ((p, v), &g) in
                param.data_mut().iter_mut().zip(v.data_mut()).zip(g.data())
            {
                *v = self.decay * *v + one_minus * g * g;
                *p = *p - self.learning_rate * g / (v.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_loss: Option<f64>,
    pub dev_accuracy: Option<f64>,
    /// Wall-clock time; excluded from reproducibility comparisons.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch with the lowest dev loss (train loss without a dev set),
    /// earliest on ties; None when no epochs ran.
    pub best_epoch: Option<usize>,
}

/// One epoch's comparable figures: epoch, train loss/accuracy, dev
/// loss/accuracy.
pub type EpochMetrics = (usize, f64, f64, Option<f64>, Option<f64>);

impl TrainReport {
    /// The comparison key for reproducibility: everything except wall time.
    pub fn metrics(&self) -> Vec<EpochMetrics> {
        self.epochs
            .iter()
            .map(|e| (e.epoch, e.train_loss, e.train_accuracy, e.dev_loss, e.dev_accuracy))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Index of the largest score, earliest on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn best_epoch(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &loss) in losses.iter().enumerate() {
        if best.is_none_or(|b| loss < losses[b]) {
            best = Some(i);
        }
    }
    best.map(|i| i + 1)
}

/// Mean loss and accuracy of `model` over `docs` without touching gradients.
pub fn evaluate<T: Scalar>(model: &Model<T>, docs: &[EncodedDocument], batch_size: usize) -> EvalMetrics {
    assert!(batch_size > 0, "batch size must be at least 1");
    if docs.is_empty() {
        return EvalMetrics { accuracy: 0.0, mean_loss: 0.0 };
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for batch in docs.chunks(batch_size) {
        let tape = Tape::new();
        let bound = model.bind(&tape, false);
        let (loss, raw) = bound.batch_loss(batch);
        loss_sum += to_f64(loss.value().item()) * batch.len() as f64;
        correct += raw
            .iter()
            .zip(batch)
            .filter(|(scores, doc)| argmax(scores) == doc.label as usize)
            .count();
    }
    EvalMetrics {
        accuracy: correct as f64 / docs.len() as f64,
        mean_loss: loss_sum / docs.len() as f64,
    }
}

/// Trains a fresh model for `opts.epochs` passes over `train_set`,
/// evaluating on `dev_set` after each epoch when present.
pub fn train<T: Scalar>(
    config: ModelConfig,
    vocab_size: usize,
    train_set: &[EncodedDocument],
    dev_set: Option<&[EncodedDocument]>,
    opts: &TrainOptions,
) -> Result<(Model<T>, TrainReport), TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if opts.batch_size == 0 {
        return Err(TrainError::ZeroBatchSize);
    }
    let mut model = Model::init(config, vocab_size, opts.seed)?;
    let mut optimizer = RmsProp::new(&model.params, opts);
    let mut shuffle_rng = rng::stream(opts.seed, rng::SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch_ids in order.chunks(opts.batch_size) {
            let batch: Vec<EncodedDocument> =
                batch_ids.iter().map(|&i| train_set[i].clone()).collect();
            let tape = Tape::new();
            let bound = model.bind(&tape, true);
            let (loss, raw) = bound.batch_loss(&batch);
            loss.backward().expect("loss is scalar");
            loss_sum += to_f64(loss.value().item()) * batch.len() as f64;
            correct += raw
                .iter()
                .zip(&batch)
                .filter(|(scores, doc)| argmax(scores) == doc.label as usize)
                .count();
            optimizer.step(&mut model.params, &bound.grads());
        }
        let dev = dev_set.map(|docs| evaluate(&model, docs, opts.batch_size));
        epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            dev_loss: dev.map(|m| m.mean_loss),
            dev_accuracy: dev.map(|m| m.accuracy),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let losses: Vec<f64> = epochs
        .iter()
        .map(|e| e.dev_loss.unwrap_or(e.train_loss))
        .collect();
    let report = TrainReport { best_epoch: best_epoch(&losses), epochs };
    Ok((model, report))
}
