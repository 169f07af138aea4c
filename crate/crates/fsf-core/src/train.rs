//! Centralized training: Adam, mini-batch gradient averaging, and evaluation
//! metrics.
//!
//! Reductions over a batch always happen in sample order, so results are
//! bitwise identical whether per-sample gradients were computed sequentially
//! or in parallel. Epoch shuffles draw from a dedicated RNG stream tagged
//! with `(client_id, epoch_index)`; centralized training uses client 0, and
//! federated local training reuses the same convention so that the two paths
//! coincide exactly in the single-client case.

use ndarray::Array2;
use serde::Serialize;

use crate::data::{shuffled_indices, SequenceSample};
use crate::exec::{map_indexed, Parallelism};
use crate::model::{
    forward, loss_and_gradients, Gradients, LossKind, ModelError, ModelWeights,
};
use crate::rng::{derive_rng, Stream};

/// Training failures.
#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no training samples provided")]
    NoData,
}

/// Hyper-parameters for one training run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 128, learning_rate: 3e-4, loss: LossKind::SmoothL1, seed: 42 }
    }
}

/// Adam optimizer with bias correction. Moment buffers align with
/// [`ModelWeights::flat`] tensor-for-tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(weights: &ModelWeights, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = weights.flat().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update in place. `gradients` must share the weight shape.
    pub fn step(&mut self, weights: &mut ModelWeights, gradients: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((w, g), (m, v)) in weights
            .flat_mut()
            .into_iter()
            .zip(gradients.flat())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..w.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// Mean loss and mean gradient over a batch.
///
/// Per-sample gradients are summed in batch order and scaled by `1/B`, so the
/// result does not depend on the execution mode.
pub fn batch_gradient(
    weights: &ModelWeights,
    batch: &[&SequenceSample],
    kind: LossKind,
    class_weights: &[f64],
    mode: Parallelism,
) -> Result<(f64, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::NoData);
    }
    let per_sample = map_indexed(mode, batch.len(), |i| {
        let s = batch[i];
        let cw = class_weights.get(s.label as usize).copied().unwrap_or(1.0);
        loss_and_gradients(weights, &s.values, kind, s.label as usize, cw)
    });
    let mut acc = ModelWeights::zeros(&weights.config);
    let mut loss_sum = 0.0;
    for r in per_sample {
        let (loss, grads) = r?;
        loss_sum += loss;
        acc.add_scaled(&grads, 1.0);
    }
    let inv = 1.0 / batch.len() as f64;
    acc.scale(inv);
    Ok((loss_sum * inv, acc))
}

/// One pass over the training set: shuffle, batch, update. Returns the mean
/// per-sample loss.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch(
    weights: &mut ModelWeights,
    optimizer: &mut Adam,
    train: &[SequenceSample],
    kind: LossKind,
    class_weights: &[f64],
    batch_size: usize,
    seed: u64,
    client_id: u64,
    epoch_index: u64,
    mode: Parallelism,
) -> Result<f64, TrainError> {
    if train.is_empty() || batch_size == 0 {
        return Err(TrainError::NoData);
    }
    let mut rng = derive_rng(seed, Stream::Shuffle, &[client_id, epoch_index]);
    let order = shuffled_indices(train.len(), &mut rng);
    let mut loss_sum = 0.0;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| &train[i]).collect();
        let (loss, grads) = batch_gradient(weights, &batch, kind, class_weights, mode)?;
        optimizer.step(weights, &grads);
        loss_sum += loss * batch.len() as f64;
    }
    Ok(loss_sum / train.len() as f64)
}

/// Per-epoch progress record (serialized as JSON lines by the CLI).
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Option<Metrics>,
}

/// Trains in place; returns one record per epoch, with validation metrics
/// whenever a validation set is supplied.
pub fn train_centralized(
    weights: &mut ModelWeights,
    train: &[SequenceSample],
    validation: &[SequenceSample],
    class_weights: &[f64],
    config: &TrainConfig,
    mode: Parallelism,
) -> Result<Vec<EpochRecord>, TrainError> {
    let mut opt = Adam::new(weights, config.learning_rate);
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let train_loss = run_epoch(
            weights,
            &mut opt,
            train,
            config.loss,
            class_weights,
            config.batch_size,
            config.seed,
            0,
            epoch as u64,
            mode,
        )?;
        let validation_metrics = if validation.is_empty() {
            None
        } else {
            Some(evaluate(weights, validation, mode)?)
        };
        records.push(EpochRecord { epoch, train_loss, validation: validation_metrics });
    }
    Ok(records)
}

/// Per-class evaluation scores.
#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    /// True-sample count for this class (fractional after aggregation).
    pub support: f64,
    /// (TP + TN) / N.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Evaluation summary: micro accuracy, macro scores over classes that appear
/// in the data, per-class detail, and the full confusion matrix
/// (rows = true class, columns = predicted; fractional after aggregation).
#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub samples: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<f64>>,
}

/// Runs the model over `samples` and scores predictions against labels.
pub fn evaluate(
    weights: &ModelWeights,
    samples: &[SequenceSample],
    mode: Parallelism,
) -> Result<Metrics, TrainError> {
    let classes = weights.config.classes;
    let predictions = map_indexed(mode, samples.len(), |i| {
        forward(weights, &samples[i].values).map(|t| t.predicted)
    });
    let mut confusion = vec![vec![0.0f64; classes]; classes];
    for (s, p) in samples.iter().zip(predictions) {
        confusion[s.label as usize][p?] += 1.0;
    }
    Ok(metrics_from_confusion(confusion))
}

/// Derives every score from a (possibly fractional) confusion matrix.
pub fn metrics_from_confusion(confusion: Vec<Vec<f64>>) -> Metrics {
    let classes = confusion.len();
    let total: f64 = confusion.iter().flatten().sum();
    let diag: f64 = (0..classes).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(classes);
    let (mut macro_p, mut macro_r, mut macro_f1, mut present) = (0.0, 0.0, 0.0, 0usize);
    for c in 0..classes {
        let tp = confusion[c][c];
        let support: f64 = confusion[c].iter().sum();
        let predicted: f64 = (0..classes).map(|r| confusion[r][c]).sum();
        let fp = predicted - tp;
        let fn_ = support - tp;
        let tn = total - tp - fp - fn_;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let accuracy = if total > 0.0 { (tp + tn) / total } else { 0.0 };
        if support > 0.0 {
            macro_p += precision;
            macro_r += recall;
            macro_f1 += f1;
            present += 1;
        }
        per_class.push(ClassMetrics { class: c, support, accuracy, precision, recall, f1 });
    }
    let denom = present.max(1) as f64;
    Metrics {
        samples: total.round() as usize,
        accuracy: if total > 0.0 { diag / total } else { 0.0 },
        macro_precision: macro_p / denom,
        macro_recall: macro_r / denom,
        macro_f1: macro_f1 / denom,
        per_class,
        confusion,
    }
}

/// Sample-count-weighted mean of metric sets (all fields, confusion
/// included). Used to summarize per-client evaluations in federation.
pub fn aggregate_metrics(parts: &[Metrics]) -> Option<Metrics> {
    let weighted: Vec<(f64, &Metrics)> = parts.iter().map(|m| (m.samples as f64, m)).collect();
    aggregate_metrics_weighted(&weighted)
}

/// Weighted mean of metric sets with caller-supplied weights (every field,
/// confusion included; weights are normalized internally).
pub fn aggregate_metrics_weighted(parts: &[(f64, &Metrics)]) -> Option<Metrics> {
    let (_, first) = parts.first()?;
    let classes = first.confusion.len();
    let total: f64 = parts.iter().map(|(n, _)| n).sum();
    if total <= 0.0 {
        return None;
    }
    let mut confusion = vec![vec![0.0f64; classes]; classes];
    let mut out = Metrics {
        samples: 0,
        accuracy: 0.0,
        macro_precision: 0.0,
        macro_recall: 0.0,
        macro_f1: 0.0,
        per_class: (0..classes)
            .map(|c| ClassMetrics { class: c, support: 0.0, accuracy: 0.0, precision: 0.0, recall: 0.0, f1: 0.0 })
            .collect(),
        confusion: Vec::new(),
    };
    for (n, m) in parts {
        let w = n / total;
        out.accuracy += w * m.accuracy;
        out.macro_precision += w * m.macro_precision;
        out.macro_recall += w * m.macro_recall;
        out.macro_f1 += w * m.macro_f1;
        for (acc_row, row) in confusion.iter_mut().zip(&m.confusion) {
            for (a, v) in acc_row.iter_mut().zip(row) {
                *a += w * v;
            }
        }
        for (acc_c, c) in out.per_class.iter_mut().zip(&m.per_class) {
            acc_c.support += w * c.support;
            acc_c.accuracy += w * c.accuracy;
            acc_c.precision += w * c.precision;
            acc_c.recall += w * c.recall;
            acc_c.f1 += w * c.f1;
        }
    }
    out.samples = parts.iter().map(|(_, m)| m.samples).sum();
    out.confusion = confusion;
    Some(out)
}

/// Convenience: probability assigned to the most likely class for each
/// sample (used by unseen-attack detection).
pub fn max_probabilities(
    weights: &ModelWeights,
    inputs: &[Array2<f64>],
    mode: Parallelism,
) -> Result<Vec<f64>, ModelError> {
    map_indexed(mode, inputs.len(), |i| {
        forward(weights, &inputs[i]).map(|t| {
            t.probs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        })
    })
    .into_iter()
    .collect()
}
