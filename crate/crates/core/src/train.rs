//! Gradient-descent updates and the subsampled training loop.
//!
//! One OBFTF step forwards the whole mini-batch, asks a sampler which
//! samples to keep, and back-propagates only through those.

use std::time::Duration;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{Budget, LossVector};
use crate::model::{argmax, batch_losses, forward, gradient, per_sample_loss, ModelParams, Reduction};
use crate::rng::{derive_indexed, stream};
use crate::sampler::{select_detailed, SamplerSpec};
use crate::scalar::{ordered_sum, Scalar};
use crate::solver::SolveStatus;

/// Learning rate as a function of the update step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        rate: f64,
    },
    /// `rate · factor^(step / period)`.
    StepDecay {
        rate: f64,
        factor: f64,
        period: u64,
    },
}

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        LrSchedule::Constant { rate }
    }

    /// A non-negative base rate is accepted so that `η = 0` can freeze a run.
    pub fn validate(&self) -> Result<()> {
        let rate = match *self {
            LrSchedule::Constant { rate } => rate,
            LrSchedule::StepDecay {
                rate,
                factor,
                period,
            } => {
                if !(factor > 0.0 && factor <= 1.0) {
                    return Err(Error::config(
                        "lr.factor",
                        format!("decay factor must lie in (0, 1], got {factor}"),
                    ));
                }
                if period == 0 {
                    return Err(Error::config("lr.period", "decay period must be positive"));
                }
                rate
            }
        };
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::config(
                "lr.rate",
                format!("learning rate must be finite and non-negative, got {rate}"),
            ));
        }
        Ok(())
    }

    pub fn rate_at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { rate } => rate,
            LrSchedule::StepDecay {
                rate,
                factor,
                period,
            } => rate * factor.powi((step / period) as i32),
        }
    }
}

/// Parameters plus everything that advances during training.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub step: u64,
    pub epoch: u64,
    pub schedule: LrSchedule,
    pub reduction: Reduction,
    /// Master seed; per-epoch shuffle and sampler streams derive from it.
    pub seed: u64,
    pub forward_count: u64,
    pub backward_count: u64,
}

/// What happened in one batch of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub batch_index: usize,
    pub batch_len: usize,
    pub selected: usize,
    /// Mean of the forward losses over the whole batch.
    pub batch_mean_loss: f64,
    pub objective: Option<f64>,
    pub status: Option<SolveStatus>,
    pub nodes_explored: u64,
    pub solve_time: Duration,
}

/// Summary of an epoch assembled from its batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub batches: Vec<BatchStats>,
}

impl EpochStats {
    pub fn selected(&self) -> usize {
        self.batches.iter().map(|b| b.selected).sum()
    }

    /// Forward-loss mean over every example seen in the epoch.
    pub fn train_mean_loss(&self) -> f64 {
        let n: usize = self.batches.iter().map(|b| b.batch_len).sum();
        let total = ordered_sum(self.batches.iter().map(|b| b.batch_mean_loss * b.batch_len as f64));
        total / n as f64
    }

    /// Mean solver objective over the batches that report one.
    pub fn mean_objective(&self) -> Option<f64> {
        let v: Vec<f64> = self.batches.iter().filter_map(|b| b.objective).collect();
        (!v.is_empty()).then(|| ordered_sum(v.iter().copied()) / v.len() as f64)
    }

    /// The weakest solver status seen in the epoch.
    pub fn worst_status(&self) -> Option<SolveStatus> {
        let rank = |s: &SolveStatus| match s {
            SolveStatus::ProvenOptimal => 0,
            SolveStatus::Heuristic => 1,
            SolveStatus::BudgetExhaustedBestFound => 2,
        };
        self.batches.iter().filter_map(|b| b.status).max_by_key(rank)
    }
}

/// Test metrics of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub mean_loss: f64,
    /// Fraction of argmax-correct predictions; `None` for regression.
    pub accuracy: Option<f64>,
}

const EVAL_CHUNK: usize = 1024;

impl<T: Scalar> TrainState<T> {
    pub fn new(params: ModelParams<T>, schedule: LrSchedule, reduction: Reduction, seed: u64) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            params,
            step: 0,
            epoch: 0,
            schedule,
            reduction,
            seed,
            forward_count: 0,
            backward_count: 0,
        })
    }

    fn update(&mut self, data: &Dataset<T>, indices: &[usize]) -> Result<()> {
        let g = gradient(&self.params, data, indices, self.reduction)?;
        let lr = T::of(self.schedule.rate_at(self.step));
        self.params.apply_update(&g, lr);
        self.step += 1;
        self.backward_count += indices.len() as u64;
        Ok(())
    }

    /// One full-batch gradient step.
    pub fn gd_step(&mut self, data: &Dataset<T>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::usage("gradient descent on an empty dataset"));
        }
        let all: Vec<usize> = (0..data.len()).collect();
        self.forward_count += all.len() as u64;
        self.update(data, &all)
    }

    /// One step on a single example.
    pub fn sgd_step(&mut self, data: &Dataset<T>, index: usize) -> Result<()> {
        if index >= data.len() {
            return Err(Error::usage(format!(
                "example {index} out of range for {} examples",
                data.len()
            )));
        }
        self.forward_count += 1;
        self.update(data, &[index])
    }

    /// Epoch order: Fisher–Yates over all indices from the epoch's stream.
    pub fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(derive_indexed(self.seed, "shuffle", self.epoch)));
        order
    }

    /// Plain mini-batch gradient descent over one shuffled epoch.
    pub fn minibatch_epoch(&mut self, data: &Dataset<T>, batch_size: usize) -> Result<EpochStats> {
        check_batch(data, batch_size)?;
        let order = self.epoch_order(data.len());
        let mut batches = Vec::new();
        for (bi, batch) in order.chunks(batch_size).enumerate() {
            let losses = batch_losses(&self.params, data, batch).map_err(|e| in_batch(bi, e))?;
            self.forward_count += batch.len() as u64;
            self.update(data, batch).map_err(|e| in_batch(bi, e))?;
            batches.push(BatchStats {
                batch_index: bi,
                batch_len: batch.len(),
                selected: batch.len(),
                batch_mean_loss: mean_f64(&losses),
                objective: None,
                status: None,
                nodes_explored: 0,
                solve_time: Duration::ZERO,
            });
        }
        self.epoch += 1;
        Ok(EpochStats { batches })
    }

    /// One epoch of subsampled training: forward every batch, select with
    /// `sampler` under `budget`, and update on the selection only.
    ///
    /// A trailing partial batch keeps the budget's ratio: an absolute budget
    /// `b` of a batch size `n` becomes `b / n` of the shorter batch.
    pub fn obftf_epoch(
        &mut self,
        data: &Dataset<T>,
        batch_size: usize,
        sampler: &SamplerSpec,
        budget: Budget,
    ) -> Result<EpochStats> {
        check_batch(data, batch_size)?;
        sampler.validate()?;
        budget.validate()?;
        let order = self.epoch_order(data.len());
        let mut rng = stream(derive_indexed(self.seed, "sampler", self.epoch));
        let mut batches = Vec::new();
        for (bi, batch) in order.chunks(batch_size).enumerate() {
            let batch_budget = match budget {
                Budget::Count(b) if batch.len() < batch_size => Budget::Ratio((b.min(batch_size) as f64) / batch_size as f64),
                other => other,
            };
            let preds = forward(&self.params, data, batch).map_err(|e| in_batch(bi, e))?;
            let losses = per_sample_loss(&preds, data, batch).map_err(|e| in_batch(bi, e))?;
            self.forward_count += batch.len() as u64;

            let started = std::time::Instant::now();
            let selection = select_detailed(sampler, &losses, batch_budget, &mut rng).map_err(|e| in_batch(bi, e))?;
            let solve_time = started.elapsed();

            let chosen: Vec<usize> = selection.mask.indices().into_iter().map(|p| batch[p]).collect();
            self.update(data, &chosen).map_err(|e| in_batch(bi, e))?;
            batches.push(BatchStats {
                batch_index: bi,
                batch_len: batch.len(),
                selected: chosen.len(),
                batch_mean_loss: mean_f64(&losses),
                objective: Some(selection.objective.as_f64()),
                status: selection.status,
                nodes_explored: selection.nodes_explored,
                solve_time,
            });
        }
        self.epoch += 1;
        Ok(EpochStats { batches })
    }
}

/// Mean per-sample loss and, for classifiers, accuracy.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::usage("evaluation on an empty dataset"));
    }
    let classify = data.classes().is_some();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let preds = forward(params, data, chunk)?;
        let losses = per_sample_loss(&preds, data, chunk)?;
        loss_sum += ordered_sum(losses.as_slice().iter().map(|l| l.as_f64()));
        if classify {
            for (r, &i) in chunk.iter().enumerate() {
                if let crate::data::Target::Class(c) = data.target(i) {
                    if argmax(preds.row(r)) == c as usize {
                        correct += 1;
                    }
                }
            }
        }
    }
    Ok(EvalMetrics {
        mean_loss: loss_sum / data.len() as f64,
        accuracy: classify.then(|| correct as f64 / data.len() as f64),
    })
}

fn check_batch<T: Scalar>(data: &Dataset<T>, batch_size: usize) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "batch size must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::usage("training on an empty dataset"));
    }
    Ok(())
}

fn in_batch(index: usize, e: Error) -> Error {
    Error::Batch {
        index,
        source: Box::new(e),
    }
}

fn mean_f64<T: Scalar>(losses: &LossVector<T>) -> f64 {
    ordered_sum(losses.as_slice().iter().map(|l| l.as_f64())) / losses.len() as f64
}
