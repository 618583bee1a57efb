//! Seeded, stratified, permutation-stable selection.
//!
//! Each sample is ranked by a hash of its seed, pixels and label, so the
//! same samples are chosen no matter how the input is ordered. Outputs keep
//! the input's relative order.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimexError};
use crate::rng::splitmix64;

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        SplitSpec { train_fraction, seed }
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

fn content_key(dataset: &Dataset, i: usize, seed: u64) -> u64 {
    let mut h = splitmix64(seed ^ 0x5157_4c49_545f_4b45);
    for &v in dataset.sample(i) {
        h = splitmix64(h ^ v.to_bits() as u64);
    }
    if let Some(l) = dataset.labels() {
        h = splitmix64(h ^ (l[i] as u64).wrapping_mul(0x9e37_79b9));
    }
    h
}

/// Indices of `members` ordered by content key; ties keep member order.
fn ranked(dataset: &Dataset, members: &[usize], seed: u64) -> Vec<usize> {
    let mut keyed: Vec<(u64, usize)> = members.iter().map(|&i| (content_key(dataset, i, seed), i)).collect();
    keyed.sort_by_key(|&(k, _)| k);
    keyed.into_iter().map(|(_, i)| i).collect()
}

fn groups(dataset: &Dataset) -> Vec<Vec<usize>> {
    if dataset.is_labeled() {
        dataset.partition().into_values().collect()
    } else {
        vec![(0..dataset.len()).collect()]
    }
}

/// Stratified train/test split. Each class of size `n` contributes
/// `clamp(round(n * fraction), 1, n - 1)` training samples; classes with a
/// single sample are rejected.
pub fn split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(SimexError::invalid(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut in_train = vec![false; dataset.len()];
    let mut any = false;
    for (g, members) in groups(dataset).into_iter().enumerate() {
        let n = members.len();
        if n < 2 {
            let class = dataset.labels().map_or(g, |l| l[members[0]]);
            return Err(SimexError::InsufficientSamples {
                class,
                available: n,
                required: 2,
            });
        }
        any = true;
        let n_train = ((n as f64 * spec.train_fraction).round() as usize).clamp(1, n - 1);
        for i in ranked(dataset, &members, spec.seed).into_iter().take(n_train) {
            in_train[i] = true;
        }
    }
    if !any {
        return Err(SimexError::Empty("dataset to split"));
    }
    let train: Vec<usize> = (0..dataset.len()).filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = (0..dataset.len()).filter(|&i| !in_train[i]).collect();
    Ok((
        dataset.subset(&train, format!("{}/train", dataset.id())),
        dataset.subset(&test, format!("{}/test", dataset.id())),
    ))
}

/// Exactly `per_class` samples from every class present.
pub fn balance(dataset: &Dataset, per_class: usize, seed: u64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(SimexError::invalid("per-class count must be positive"));
    }
    if !dataset.is_labeled() {
        return Err(SimexError::invalid(format!("dataset `{}` is unlabeled", dataset.id())));
    }
    let mut keep = vec![false; dataset.len()];
    for (class, members) in dataset.partition() {
        if members.len() < per_class {
            return Err(SimexError::InsufficientSamples {
                class,
                available: members.len(),
                required: per_class,
            });
        }
        for i in ranked(dataset, &members, seed).into_iter().take(per_class) {
            keep[i] = true;
        }
    }
    let idx: Vec<usize> = (0..dataset.len()).filter(|&i| keep[i]).collect();
    Ok(dataset.subset(&idx, format!("{}/balanced", dataset.id())))
}

/// At most `limit` samples, chosen by content key; order preserved.
pub fn take_subset(dataset: &Dataset, limit: usize, seed: u64) -> Dataset {
    if dataset.len() <= limit {
        return dataset.clone();
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut idx: Vec<usize> = ranked(dataset, &all, seed).into_iter().take(limit).collect();
    idx.sort_unstable();
    dataset.subset(&idx, dataset.id().to_string())
}
