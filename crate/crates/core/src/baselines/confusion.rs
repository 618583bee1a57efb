use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SimexError};
use crate::models::{build_classifier, train, TrainConfig};
use crate::rng::derive_seed;

/// Mean softmax of the held-out class's samples under a classifier
/// trained without that class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub held_out: usize,
    /// The remaining classes, ascending; `mass[j]` belongs to `classes[j]`.
    pub classes: Vec<usize>,
    pub mass: Vec<f64>,
}

impl ConfusionReport {
    /// Mass assigned to `class`, zero for the held-out class itself.
    pub fn mass_on(&self, class: usize) -> f64 {
        self.classes.iter().position(|&c| c == class).map_or(0.0, |j| self.mass[j])
    }
}

/// Train a classifier on every class except `held_out` and report where
/// the held-out samples land.
pub fn confusion_probe(dataset: &Dataset, held_out: usize, config: &TrainConfig) -> Result<ConfusionReport> {
    let partition = dataset.partition();
    if !dataset.is_labeled() {
        return Err(SimexError::invalid(format!("dataset `{}` is unlabeled", dataset.id())));
    }
    for class in 0..dataset.num_classes() {
        if !partition.contains_key(&class) {
            return Err(SimexError::InsufficientSamples {
                class,
                available: 0,
                required: 1,
            });
        }
    }
    if held_out >= dataset.num_classes() {
        return Err(SimexError::invalid(format!(
            "held-out class {held_out} outside {} classes",
            dataset.num_classes()
        )));
    }
    let classes: Vec<usize> = (0..dataset.num_classes()).filter(|&c| c != held_out).collect();
    let remap = |c: usize| classes.iter().position(|&k| k == c);
    let train_set = dataset.remap_labels(remap, format!("{}/without-{held_out}", dataset.id()))?;
    let probe = dataset.class_subset(held_out)?;

    let seed = derive_seed(config.seed, &format!("confusion-{held_out}"));
    let mut model = build_classifier::<f32>(dataset.height(), dataset.width(), classes.len(), seed)?;
    train(&mut model, &train_set, &config.clone().with_seed(seed))?;
    let probs = model.predict(&probe.to_tensor::<f32>())?;
    let mut mass = vec![0.0; classes.len()];
    for i in 0..probs.batch() {
        for (m, p) in mass.iter_mut().zip(probs.sample(i)) {
            *m += *p as f64;
        }
    }
    for m in &mut mass {
        *m /= probs.batch() as f64;
    }
    Ok(ConfusionReport {
        held_out,
        classes,
        mass,
    })
}

/// One probe per class, in class order; the rows form a confusion grid
/// with an empty diagonal.
pub fn confusion_grid(dataset: &Dataset, config: &TrainConfig, parallel: bool) -> Result<Vec<ConfusionReport>> {
    let ks: Vec<usize> = (0..dataset.num_classes()).collect();
    if parallel {
        ks.par_iter().map(|&k| confusion_probe(dataset, k, config)).collect()
    } else {
        ks.iter().map(|&k| confusion_probe(dataset, k, config)).collect()
    }
}
