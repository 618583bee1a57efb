//! Mini-batch training loop shared by autoencoders and classifiers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SimexError};
use crate::loss::{batch_loss_and_grad, LossKind};
use crate::rng::RngStream;
use crate::tensor::{OptimizerConfig, OptimizerState, Precision, Scalar, Sequential, Tensor};

use super::architecture::{softmax_rows, AutoencoderModel, ClassifierModel, ModelMeta};

fn default_batch_size() -> usize {
    128
}

fn default_shuffle() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    /// Reconstruction loss; classifiers always use softmax cross-entropy.
    #[serde(default)]
    pub loss: LossKind,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
    #[serde(default)]
    pub precision: Precision,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig, loss: LossKind, epochs: usize) -> Self {
        TrainConfig {
            optimizer,
            loss,
            epochs,
            batch_size: default_batch_size(),
            seed: 0,
            shuffle: true,
            precision: Precision::F32,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(SimexError::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// What a training step minimises.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Reconstruct(LossKind),
    Classify { labels: Vec<usize>, num_classes: usize },
}

/// Models the training loop can drive.
pub trait Trainable<T: Scalar> {
    fn network(&self) -> &Sequential<T>;
    fn network_mut(&mut self) -> &mut Sequential<T>;
    fn meta_mut(&mut self) -> &mut ModelMeta;
    /// Validate `dataset` against the model and derive the objective.
    fn objective(&self, dataset: &Dataset, config: &TrainConfig) -> Result<Objective>;
}

impl<T: Scalar> Trainable<T> for AutoencoderModel<T> {
    fn network(&self) -> &Sequential<T> {
        &self.net
    }

    fn network_mut(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }

    fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    fn objective(&self, dataset: &Dataset, config: &TrainConfig) -> Result<Objective> {
        if (dataset.height(), dataset.width()) != (self.height, self.width) {
            return Err(SimexError::shape(
                "training images",
                &[self.height, self.width],
                &[dataset.height(), dataset.width()],
            ));
        }
        Ok(Objective::Reconstruct(config.loss))
    }
}

impl<T: Scalar> Trainable<T> for ClassifierModel<T> {
    fn network(&self) -> &Sequential<T> {
        &self.net
    }

    fn network_mut(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }

    fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    fn objective(&self, dataset: &Dataset, _config: &TrainConfig) -> Result<Objective> {
        if (dataset.height(), dataset.width()) != (self.height, self.width) {
            return Err(SimexError::shape(
                "training images",
                &[self.height, self.width],
                &[dataset.height(), dataset.width()],
            ));
        }
        let labels = dataset
            .labels()
            .ok_or_else(|| SimexError::invalid(format!("classifier training set `{}` is unlabeled", dataset.id())))?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(SimexError::invalid(format!(
                "label {bad} outside the classifier's {} classes",
                self.num_classes
            )));
        }
        Ok(Objective::Classify {
            labels: labels.to_vec(),
            num_classes: self.num_classes,
        })
    }
}

/// Per-sample cross-entropy of `(N, K)` logits and the gradient of the
/// batch mean w.r.t. the logits.
pub fn cross_entropy_and_grad<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(Vec<f64>, Tensor<T>)> {
    let n = logits.batch();
    if labels.len() != n {
        return Err(SimexError::shape("cross-entropy labels", &[n], &[labels.len()]));
    }
    let k = logits.per_sample();
    let probs = softmax_rows(logits);
    let mut values = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n * k);
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(SimexError::invalid(format!("label {label} outside {k} classes")));
        }
        let row = logits.sample(i);
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        values.push(lse - row[label].as_f64());
        for (j, p) in probs.sample(i).iter().enumerate() {
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64_lossy((p.as_f64() - target) / n as f64));
        }
    }
    Ok((values, Tensor::from_vec(&[n, k], grad)?))
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample training loss of each completed epoch.
    pub history: Vec<f64>,
    pub wall_seconds: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochInfo {
    /// Epochs completed so far in this run.
    pub epoch: usize,
    pub loss: f64,
}

/// Train every layer for `config.epochs` epochs.
pub fn train<T: Scalar, M: Trainable<T>>(model: &mut M, dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    train_monitored(model, dataset, config, 0, |_, _| Ok(Flow::Continue))
}

/// Train layers `first_trainable..`; earlier layers are frozen and run in
/// inference mode. `monitor` is called after every epoch and may stop the
/// run early.
pub fn train_monitored<T, M, F>(
    model: &mut M,
    dataset: &Dataset,
    config: &TrainConfig,
    first_trainable: usize,
    mut monitor: F,
) -> Result<TrainReport>
where
    T: Scalar,
    M: Trainable<T>,
    F: FnMut(EpochInfo, &M) -> Result<Flow>,
{
    config.validate()?;
    if config.precision != T::PRECISION {
        return Err(SimexError::invalid(format!(
            "config precision {:?} does not match model precision {:?}",
            config.precision,
            T::PRECISION
        )));
    }
    if dataset.is_empty() {
        return Err(SimexError::Empty("training dataset"));
    }
    if first_trainable > model.network().len() {
        return Err(SimexError::invalid(format!(
            "first trainable layer {first_trainable} beyond network of {} layers",
            model.network().len()
        )));
    }
    let objective = model.objective(dataset, config)?;
    let inputs: Tensor<T> = dataset.to_tensor();
    let mut optimizer = OptimizerState::new(config.optimizer, &model.network().params_from(first_trainable))?;
    let mut shuffle_rng = RngStream::new(config.seed).fork("shuffle");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;
    let started = Instant::now();

    for epoch in 0..config.epochs {
        if config.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = inputs.gather(chunk);
            let net = model.network();
            let (out, trace) = net.forward_from(x.clone(), first_trainable)?;
            let (values, grad) = match &objective {
                Objective::Reconstruct(kind) => batch_loss_and_grad(&x, &out, kind)?,
                Objective::Classify { labels, .. } => {
                    let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    cross_entropy_and_grad(&out, &batch_labels)?
                }
            };
            let batch_sum: f64 = values.iter().sum();
            if !batch_sum.is_finite() {
                return Err(SimexError::NonFinite(format!(
                    "training loss in epoch {} batch {b}",
                    epoch + 1
                )));
            }
            total += batch_sum;
            let (_, grads) = net.backward(&trace, grad, false)?;
            let mut params = model.network_mut().params_mut_from(first_trainable);
            optimizer.step(&mut params, &grads)?;
        }
        let loss = total / dataset.len() as f64;
        history.push(loss);
        if monitor(EpochInfo { epoch: epoch + 1, loss }, model)? == Flow::Stop {
            stopped_early = epoch + 1 < config.epochs;
            break;
        }
    }

    let wall_seconds = started.elapsed().as_secs_f64();
    let meta = model.meta_mut();
    meta.epochs_trained += history.len();
    meta.optimizer = Some(config.optimizer);
    if let Objective::Reconstruct(kind) = objective {
        meta.loss = Some(kind);
    }
    Ok(TrainReport {
        history,
        wall_seconds,
        stopped_early,
    })
}
