//! Pairwise latency: one SimEx evaluation against freeze-and-retrain.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use simex_core::baselines::{tl_configs, transfer_retrain, TransferConfig};
use simex_core::data::Dataset;
use simex_core::engine::evaluate_delta;
use simex_core::loss::LossKind;
use simex_core::models::{AutoencoderModel, ClassifierModel, TrainConfig};
use simex_core::tensor::{OptimizerConfig, Scalar};
use simex_core::{Result, SimexError};

use crate::config::SCHEMA_VERSION;

/// Runs discarded before timing starts.
pub const WARMUP_RUNS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Wall seconds per timed run, monotonic clock.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation (n - 1); zero for a single run.
    pub std: f64,
    pub relative_std: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(SimexError::Empty("latency samples"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let std = if samples.len() > 1 {
            (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(LatencyStats {
            samples,
            mean: mean.clamp(min, max),
            min,
            max,
            std,
            relative_std: if mean > 0.0 { std / mean } else { 0.0 },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferLatency {
    pub name: String,
    pub optimizer: OptimizerConfig,
    pub latency: LatencyStats,
    pub epochs_to_best: Vec<usize>,
    pub epochs_run: Vec<usize>,
    pub retrained_accuracy: f64,
    /// Mean retrain time over mean SimEx time.
    pub speedup: f64,
}

/// One-time costs, excluded from the per-pair comparison.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainCost {
    pub autoencoder_seconds: Option<f64>,
    pub classifier_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub repeats: usize,
    pub warmup_runs: usize,
    pub reference_id: String,
    pub target_id: String,
    pub target_samples: usize,
    pub loss: LossKind,
    pub simex: LatencyStats,
    pub transfer: Vec<TransferLatency>,
    pub fastest_transfer: String,
    /// Fastest retrain mean over SimEx mean.
    pub speedup_vs_fastest: f64,
    pub pretrain: PretrainCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub repeats: usize,
    /// Epoch budget, batch size, seed and split for every retrain; the
    /// optimizer is replaced by each entry of `configs`.
    pub transfer: TransferConfig,
    pub configs: Vec<(String, OptimizerConfig)>,
}

impl BenchSettings {
    /// The five standard retrain configurations.
    pub fn standard(repeats: usize, transfer_epochs: usize, patience: usize, seed: u64) -> Self {
        let configs = tl_configs();
        let mut transfer = TransferConfig::new(
            TrainConfig::new(configs[0].1, LossKind::Mse, transfer_epochs).with_seed(seed),
        );
        transfer.patience = patience;
        BenchSettings {
            repeats,
            transfer,
            configs,
        }
    }
}

fn timed<R>(repeats: usize, mut f: impl FnMut() -> Result<R>) -> Result<(Vec<f64>, Vec<R>)> {
    for _ in 0..WARMUP_RUNS {
        f()?;
    }
    let mut secs = Vec::with_capacity(repeats);
    let mut out = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        out.push(f()?);
        secs.push(t.elapsed().as_secs_f64());
    }
    Ok((secs, out))
}

/// Time SimEx (forward pass of every target sample through `member` plus
/// Δ) against each retrain configuration, strictly one run at a time.
pub fn bench_pairwise<T: Scalar>(
    member: &AutoencoderModel<T>,
    classifier: &ClassifierModel<T>,
    target: &Dataset,
    settings: &BenchSettings,
    pretrain: PretrainCost,
) -> Result<BenchReport> {
    if settings.repeats == 0 {
        return Err(SimexError::InvalidArgument("repeat count must be at least 1".into()));
    }
    if settings.configs.is_empty() {
        return Err(SimexError::Empty("retrain configurations"));
    }
    let loss = member
        .meta()
        .loss
        .ok_or_else(|| SimexError::InvalidArgument("fleet member is untrained".into()))?;
    let (simex_secs, _) = timed(settings.repeats, || evaluate_delta(member, target, &loss))?;
    let simex = LatencyStats::from_samples(simex_secs)?;

    let mut transfer = Vec::with_capacity(settings.configs.len());
    for (name, optimizer) in &settings.configs {
        let mut config = settings.transfer.clone();
        config.train.optimizer = *optimizer;
        // The retrain reports its own time, excluding data preparation.
        let (_, results) = timed(settings.repeats, || transfer_retrain(classifier, target, &config).map(|(_, r)| r))?;
        let latency = LatencyStats::from_samples(results.iter().map(|r| r.seconds).collect())?;
        transfer.push(TransferLatency {
            name: name.clone(),
            optimizer: *optimizer,
            speedup: latency.mean / simex.mean,
            latency,
            epochs_to_best: results.iter().map(|r| r.epochs_to_best).collect(),
            epochs_run: results.iter().map(|r| r.epochs_run).collect(),
            retrained_accuracy: results[0].retrained_accuracy,
        });
    }
    let fastest = transfer
        .iter()
        .min_by(|a, b| a.latency.mean.total_cmp(&b.latency.mean))
        .expect("non-empty");
    Ok(BenchReport {
        schema_version: SCHEMA_VERSION,
        repeats: settings.repeats,
        warmup_runs: WARMUP_RUNS,
        reference_id: member.reference_id().unwrap_or_default().to_string(),
        target_id: target.id().to_string(),
        target_samples: target.len(),
        loss,
        fastest_transfer: fastest.name.clone(),
        speedup_vs_fastest: fastest.speedup,
        simex,
        transfer,
        pretrain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_samples() {
        let s = LatencyStats::from_samples(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.min, s.max), (2.0, 1.0, 3.0));
        assert!((s.std - 1.0).abs() < 1e-15);
        assert!((s.relative_std - 0.5).abs() < 1e-15);
        assert_eq!(LatencyStats::from_samples(vec![4.0]).unwrap().std, 0.0);
        assert!(LatencyStats::from_samples(vec![]).is_err());
    }
}
