use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset, SplitSpec};
use crate::error::{Result, SimexError};
use crate::models::{
    build_classifier, cross_entropy_and_grad, train, train_monitored, ClassifierModel, Flow, TrainConfig,
};
use crate::rng::derive_seed;
use crate::tensor::{OptimizerConfig, OptimizerKind, Scalar, Sequential, Tensor};

/// Fraction of correctly labelled samples under arg-max prediction.
pub fn evaluate_accuracy<T: Scalar>(classifier: &ClassifierModel<T>, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(SimexError::Empty("test set"));
    }
    let labels = test
        .labels()
        .ok_or_else(|| SimexError::invalid(format!("test set `{}` is unlabeled", test.id())))?;
    let predicted = classifier.predict_labels(&test.to_tensor::<T>())?;
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Train a classifier on the train split of `dataset` and record its
/// accuracy on the test split.
pub fn pretrain_classifier<T: Scalar>(dataset: &Dataset, config: &TrainConfig, split_spec: SplitSpec) -> Result<ClassifierModel<T>> {
    let (train_set, test_set) = split(dataset, split_spec)?;
    let seed = derive_seed(config.seed, dataset.id());
    let mut model = build_classifier::<T>(dataset.height(), dataset.width(), dataset.num_classes(), seed)?;
    train(&mut model, &train_set, &config.clone().with_seed(seed))?;
    model.meta_mut().reference_id = Some(dataset.id().to_string());
    model.meta_mut().test_accuracy = Some(evaluate_accuracy(&model, &test_set)?);
    Ok(model)
}

fn default_patience() -> usize {
    3
}

fn default_reset_head() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    /// Epoch budget, optimizer and batch size for the head.
    pub train: TrainConfig,
    /// Epochs without a new test-loss minimum before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Re-initialise the FC head before retraining.
    #[serde(default = "default_reset_head")]
    pub reset_head: bool,
    #[serde(default)]
    pub split: SplitSpec,
}

impl TransferConfig {
    pub fn new(train: TrainConfig) -> Self {
        TransferConfig {
            train,
            patience: default_patience(),
            reset_head: true,
            split: SplitSpec::default(),
        }
    }
}

/// The five retraining configurations compared in the latency study:
/// RMSprop, Adam, Adadelta and SGD with momentum at their default rates,
/// then RMSprop at a tenth of its default rate.
pub fn tl_configs() -> Vec<(String, OptimizerConfig)> {
    let d = OptimizerConfig::with_default_rate;
    vec![
        ("TL-1".into(), d(OptimizerKind::Rmsprop)),
        ("TL-2".into(), d(OptimizerKind::Adam)),
        ("TL-3".into(), d(OptimizerKind::Adadelta)),
        ("TL-4".into(), d(OptimizerKind::SgdMomentum)),
        (
            "TL-5".into(),
            OptimizerConfig::new(OptimizerKind::Rmsprop, OptimizerKind::Rmsprop.default_learning_rate() / 10.0),
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub base_id: String,
    pub target_id: String,
    pub retrained_accuracy: f64,
    pub base_accuracy: f64,
    pub normalized_accuracy: f64,
    pub epochs_to_best: usize,
    pub epochs_run: usize,
    pub best_test_loss: f64,
    /// Retraining wall time, including the patience epochs.
    pub seconds: f64,
}

fn test_loss_and_accuracy<T: Scalar>(model: &ClassifierModel<T>, x: &Tensor<T>, labels: &[usize]) -> Result<(f64, f64)> {
    let logits = model.logits(x)?;
    let (values, _) = cross_entropy_and_grad(&logits, labels)?;
    let loss = values.iter().sum::<f64>() / values.len() as f64;
    let correct = (0..logits.batch())
        .filter(|&i| {
            let row = logits.sample(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == labels[i]
        })
        .count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

/// Freeze the conv trunk of `base`, retrain its FC head on the train split
/// of `target` until the test loss stops improving, and keep the head from
/// the best epoch.
pub fn transfer_retrain<T: Scalar>(
    base: &ClassifierModel<T>,
    target: &Dataset,
    config: &TransferConfig,
) -> Result<(ClassifierModel<T>, TransferResult)> {
    let base_accuracy = base
        .meta()
        .test_accuracy
        .ok_or_else(|| SimexError::invalid("base classifier has no recorded test accuracy"))?;
    if target.num_classes() != base.num_classes() {
        return Err(SimexError::invalid(format!(
            "target `{}` has {} classes, base classifier {}",
            target.id(),
            target.num_classes(),
            base.num_classes()
        )));
    }
    if config.patience == 0 {
        return Err(SimexError::invalid("patience must be at least 1"));
    }
    let (train_set, test_set) = split(target, config.split)?;
    let test_x: Tensor<T> = test_set.to_tensor();
    let test_labels = test_set.labels().expect("split keeps labels").to_vec();
    let seed = derive_seed(config.train.seed, target.id());

    let started = Instant::now();
    let mut model = base.clone();
    if config.reset_head {
        model.reset_head(base.num_classes(), seed)?;
    }
    let trunk = model.trunk_len();
    let mut best: Option<(usize, f64, f64, Sequential<T>)> = None;
    let report = train_monitored(&mut model, &train_set, &config.train.clone().with_seed(seed), trunk, |info, m| {
        let (loss, acc) = test_loss_and_accuracy(m, &test_x, &test_labels)?;
        if !loss.is_finite() {
            return Err(SimexError::NonFinite(format!("test loss after epoch {}", info.epoch)));
        }
        if best.as_ref().map_or(true, |b| loss < b.1) {
            best = Some((info.epoch, loss, acc, m.network().clone()));
        }
        let since = info.epoch - best.as_ref().expect("set above").0;
        Ok(if since >= config.patience { Flow::Stop } else { Flow::Continue })
    })?;
    let (epochs_to_best, best_test_loss, retrained_accuracy, net) =
        best.ok_or_else(|| SimexError::invalid("transfer retraining needs at least one epoch"))?;
    model.net = net;
    let seconds = started.elapsed().as_secs_f64();
    model.meta_mut().test_accuracy = Some(retrained_accuracy);
    model.meta_mut().reference_id = Some(target.id().to_string());

    let result = TransferResult {
        base_id: base.meta().reference_id.clone().unwrap_or_default(),
        target_id: target.id().to_string(),
        retrained_accuracy,
        base_accuracy,
        normalized_accuracy: if base_accuracy > 0.0 { retrained_accuracy / base_accuracy } else { 0.0 },
        epochs_to_best,
        epochs_run: report.history.len(),
        best_test_loss,
        seconds,
    };
    Ok((model, result))
}
