//! Training loop, optimizer and learning-curve fitting.

mod curve;
mod optimizer;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use curve::{
    curve_csv, fit_learning_curve, run_learning_curve, LearningCurve, LearningCurveFit, LearningCurvePoint,
};
pub use optimizer::{nesterov_step, Nesterov};

use crate::data::{elastic_deform, DataError, Dataset, ElasticParams};
use crate::eval::{EvalAccumulator, EvalError};
use crate::model::{ModelError, Network};
use crate::nn::ops::softmax_cross_entropy;
use crate::nn::{NnError, Tensor};
use crate::rng;

const SHUFFLE_STREAM: u64 = 0x5F1;
const AUGMENT_STREAM: u64 = 0xA06;
const HOLDOUT_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss}); parameters restored to {restored}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        restored: String,
    },
    #[error("label {label} out of range for a {classes}-class model")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply the rate by `factor` every `every_n_epochs` epochs.
    Step { factor: f64, every_n_epochs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Elastic distortion of training inputs; the `seed` field salts the per-sample streams.
    pub augmentation: Option<ElasticParams>,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            augmentation: None,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if let Some(a) = &self.augmentation {
            if !a.is_valid() {
                return bad("augmentation needs sigma > 0 and alpha ≥ 0".into());
            }
        }
        if let LrSchedule::Step { factor, every_n_epochs } = self.lr_schedule {
            if every_n_epochs == 0 || !(factor > 0.0) {
                return bad("step schedule needs factor > 0 and every_n_epochs ≥ 1".into());
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Step { factor, every_n_epochs } => {
                self.learning_rate * factor.powi((epoch / every_n_epochs) as i32)
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let c: Self = serde_json::from_str(text).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_top1: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    /// Epoch whose parameters the model holds on return.
    pub best_epoch: usize,
    pub best_holdout_top1: f64,
}

/// `epoch,train_loss,holdout_top1,wall_time_s` rows.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,holdout_top1,wall_time_s\n");
    for m in metrics {
        let _ = writeln!(out, "{},{},{},{:.3}", m.epoch, m.train_loss, m.holdout_top1, m.wall_time_s);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Holdout,
}

/// Instrumentation hooks; inputs are exactly what the network receives.
pub trait TrainObserver {
    fn on_batch(&mut self, _phase: Phase, _epoch: usize, _indices: &[usize], _inputs: &Tensor<f32>) {}
    fn on_epoch(&mut self, _metrics: &EpochMetrics) {}
}

impl TrainObserver for () {}

fn check_labels(model: &Network<f32>, data: &Dataset) -> Result<(), TrainError> {
    let classes = model.num_classes();
    match data.labels().iter().find(|&&l| l >= classes) {
        Some(&label) => Err(TrainError::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Training batch with per-sample elastic distortion drawn from `(seed, epoch, index)`.
fn training_batch(data: &Dataset, indices: &[usize], epoch: usize, config: &TrainConfig) -> (Tensor<f32>, Vec<usize>) {
    let (mut x, labels) = data.batch(indices);
    if let Some(aug) = config.augmentation {
        let (h, w) = (data.height(), data.width());
        for (slot, &i) in indices.iter().enumerate() {
            let params = ElasticParams {
                seed: rng::derive(config.seed, &[AUGMENT_STREAM, aug.seed, epoch as u64, i as u64]),
                ..aug
            };
            let warped = elastic_deform(x.item(slot), h, w, &params);
            x.item_mut(slot).copy_from_slice(&warped);
        }
    }
    (x, labels)
}

fn holdout_top1(
    model: &Network<f32>,
    data: &Dataset,
    epoch: usize,
    observer: &mut dyn TrainObserver,
) -> Result<f64, TrainError> {
    let classes = model.num_classes();
    let mut acc = EvalAccumulator::new(classes);
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(HOLDOUT_BATCH) {
        let (x, labels) = data.batch(chunk);
        observer.on_batch(Phase::Holdout, epoch, chunk, &x);
        let logits = model.forward(&x)?;
        for (row, &label) in logits.data().chunks_exact(classes).zip(&labels) {
            acc.add(row, label)?;
        }
    }
    Ok(acc.finish()?.cr1)
}

/// Trains in place and leaves the model holding its best-by-holdout parameters
/// (its final ones when `holdout` is empty).
pub fn train(
    model: &mut Network<f32>,
    train_data: &Dataset,
    holdout: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_observed(model, train_data, holdout, config, &mut ())
}

pub fn train_observed(
    model: &mut Network<f32>,
    train_data: &Dataset,
    holdout: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(TrainError::Data(DataError::Invalid("empty training set".into())));
    }
    check_labels(model, train_data)?;
    check_labels(model, holdout)?;

    let start = Instant::now();
    let mut optimizer = Nesterov::new(config.momentum as f32);
    let mut best = (model.snapshot(), 0usize, f64::NEG_INFINITY);
    let mut metrics = Vec::with_capacity(config.epochs);
    // a trailing batch of one sample gives degenerate batch statistics
    let usable = if train_data.len() % config.batch_size == 1 && train_data.len() > 1 {
        train_data.len() - 1
    } else {
        train_data.len()
    };

    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch - 1) as f32;
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.shuffle(&mut rng::derived(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut loss_sum = 0.0f64;
        for (b, chunk) in order[..usable].chunks(config.batch_size).enumerate() {
            let (x, labels) = training_batch(train_data, chunk, epoch, config);
            observer.on_batch(Phase::Train, epoch, chunk, &x);
            model.zero_grad();
            let logits = model.forward_train(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            let stepped = if loss.is_finite() {
                model.backward(&grad)?;
                optimizer.step(model, lr)
            } else {
                Err(TrainError::NonFiniteGradient("loss".into()))
            };
            if let Err(e) = stepped {
                model.clear_cache();
                model.restore(&best.0)?;
                let restored = if best.1 == 0 {
                    "initial values".to_string()
                } else {
                    format!("epoch {}", best.1)
                };
                return Err(match e {
                    TrainError::NonFiniteGradient(_) => TrainError::Diverged {
                        epoch,
                        batch: b,
                        loss: loss as f64,
                        restored,
                    },
                    other => other,
                });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
        }
        model.clear_cache();
        let top1 = if holdout.is_empty() {
            0.0
        } else {
            holdout_top1(model, holdout, epoch, observer)?
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / usable as f64,
            holdout_top1: top1,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        observer.on_epoch(&m);
        if holdout.is_empty() || top1 > best.2 {
            best = (model.snapshot(), epoch, top1);
        }
        metrics.push(m);
    }
    if config.epochs > 0 {
        model.restore(&best.0)?;
    }
    Ok(TrainOutcome {
        metrics,
        best_epoch: best.1,
        best_holdout_top1: best.2.max(0.0),
    })
}
