use serde::{Deserialize, Serialize};

use crate::analytics::{spearman_rho, RankList};
use crate::data::Dataset;
use crate::error::{Result, SimexError};
use crate::models::{build_autoencoder, train_monitored, AutoencoderModel, Flow, TrainConfig};
use crate::tensor::Scalar;

use super::delta::{mean_of, order_by_similarity, sample_deltas};
use super::fleet::member_seed;

fn default_checkpoints() -> Vec<usize> {
    vec![3, 5, 7, 10, 25, 50, 100]
}

fn default_window() -> usize {
    3
}

fn default_stop() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Epochs at which the probe ordering is taken; strictly ascending.
    /// The last one is the training budget.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<usize>,
    /// Consecutive checkpoints that must agree.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Set to false to record the full trace up to the budget.
    #[serde(default = "default_stop")]
    pub stop_on_convergence: bool,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            checkpoints: default_checkpoints(),
            window: default_window(),
            stop_on_convergence: true,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoints.is_empty() || self.checkpoints[0] == 0 {
            return Err(SimexError::invalid("checkpoints must be non-empty and positive"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimexError::invalid("checkpoints must be strictly ascending"));
        }
        if self.window < 2 {
            return Err(SimexError::invalid("stability window must be at least 2"));
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        *self.checkpoints.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: usize,
    /// Probe ids from most to least similar.
    pub ordering: Vec<String>,
    /// Δ per probe, in probe order.
    pub deltas: Vec<f64>,
    /// Spearman ρ against the final ordering, when one is known.
    pub rho_vs_final: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceOutcome<T: Scalar = f32> {
    pub model: AutoencoderModel<T>,
    pub converged: bool,
    pub convergence_epoch: Option<usize>,
    pub trace: Vec<CheckpointRecord>,
}

/// First epoch at which the last `window` orderings are identical.
pub fn convergence_point<O: PartialEq>(orderings: &[(usize, O)], window: usize) -> Option<usize> {
    let mut run = 0;
    for (j, (epoch, ordering)) in orderings.iter().enumerate() {
        run = if j > 0 && orderings[j - 1].1 == *ordering { run + 1 } else { 1 };
        if run >= window {
            return Some(*epoch);
        }
    }
    None
}

/// Train the reference's autoencoder, ordering `probes` by Δ at each
/// checkpoint, and stop once the ordering has been stable for the window.
/// The model is seeded exactly like a fleet member for the same reference.
pub fn train_with_ordering_convergence<T: Scalar>(
    reference: &Dataset,
    probes: &[Dataset],
    train: &TrainConfig,
    conv: &ConvergenceConfig,
    final_ordering: Option<&[String]>,
) -> Result<ConvergenceOutcome<T>> {
    conv.validate()?;
    if probes.is_empty() {
        return Err(SimexError::Empty("probe sets"));
    }
    let final_ranks = final_ordering.map(RankList::from_order).transpose()?;
    let seed = member_seed(train.seed, reference.id());
    let mut model = build_autoencoder::<T>(reference.height(), reference.width(), seed)?;
    let config = train.clone().with_seed(seed).with_epochs(conv.budget());
    let kind = train.loss;

    let mut trace: Vec<CheckpointRecord> = Vec::new();
    let mut converged_at = None;
    let mut record = |epoch: usize, model: &AutoencoderModel<T>| -> Result<Flow> {
        if !conv.checkpoints.contains(&epoch) {
            return Ok(Flow::Continue);
        }
        let mut deltas = Vec::with_capacity(probes.len());
        for p in probes {
            deltas.push(mean_of(&sample_deltas(model, p, &kind)?));
        }
        let entries: Vec<(&str, f64)> = probes.iter().map(Dataset::id).zip(deltas.iter().copied()).collect();
        let ordering = order_by_similarity(&entries)?.order;
        let rho_vs_final = match &final_ranks {
            Some(f) => Some(spearman_rho(&RankList::from_order(&ordering)?, f)?),
            None => None,
        };
        trace.push(CheckpointRecord {
            epoch,
            ordering,
            deltas,
            rho_vs_final,
        });
        if converged_at.is_none() {
            let orderings: Vec<(usize, &Vec<String>)> = trace.iter().map(|r| (r.epoch, &r.ordering)).collect();
            converged_at = convergence_point(&orderings, conv.window);
            if converged_at.is_some() && conv.stop_on_convergence {
                return Ok(Flow::Stop);
            }
        }
        Ok(Flow::Continue)
    };
    train_monitored(&mut model, reference, &config, 0, |info, m| record(info.epoch, m))?;
    model.meta_mut().reference_id = Some(reference.id().to_string());

    if final_ranks.is_none() && trace.last().map(|r| r.epoch) == Some(conv.budget()) {
        let last = RankList::from_order(&trace.last().expect("non-empty").ordering)?;
        for r in &mut trace {
            r.rho_vs_final = Some(spearman_rho(&RankList::from_order(&r.ordering)?, &last)?);
        }
    }
    Ok(ConvergenceOutcome {
        model,
        converged: converged_at.is_some(),
        convergence_epoch: converged_at,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(epochs: &[usize], orderings: &[&str]) -> Vec<(usize, String)> {
        epochs.iter().copied().zip(orderings.iter().map(|s| s.to_string())).collect()
    }

    #[test]
    fn stable_from_ten_converges_at_fifty() {
        let t = trace(&[3, 5, 7, 10, 25, 50, 100], &["bac", "abc", "bac", "abc", "abc", "abc", "abc"]);
        assert_eq!(convergence_point(&t, 3), Some(50));
    }

    #[test]
    fn constant_from_start_converges_at_third_checkpoint() {
        let t = trace(&[3, 5, 7, 10], &["abc"; 4]);
        assert_eq!(convergence_point(&t, 3), Some(7));
        assert_eq!(convergence_point(&t, 2), Some(5));
    }

    #[test]
    fn alternating_never_converges() {
        let t = trace(&[1, 2, 3, 4], &["ab", "ba", "ab", "ba"]);
        assert_eq!(convergence_point(&t, 2), None);
    }

    #[test]
    fn config_validation() {
        assert!(ConvergenceConfig::default().validate().is_ok());
        let bad = |checkpoints: Vec<usize>, window| ConvergenceConfig {
            checkpoints,
            window,
            stop_on_convergence: true,
        };
        assert!(bad(vec![5, 3], 3).validate().is_err());
        assert!(bad(vec![], 3).validate().is_err());
        assert!(bad(vec![1, 2], 1).validate().is_err());
    }
}
