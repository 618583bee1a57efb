use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SimexError};
use crate::loss::LossKind;
use crate::models::{build_autoencoder, load_checkpoint, save_checkpoint, train, AutoencoderModel, TrainConfig, TrainReport};
use crate::rng::derive_seed;
use crate::tensor::Scalar;

/// One autoencoder per reference dataset, all trained under the same
/// configuration and loss.
#[derive(Debug, Clone)]
pub struct Fleet<T: Scalar = f32> {
    members: BTreeMap<String, AutoencoderModel<T>>,
    loss: LossKind,
    reports: BTreeMap<String, TrainReport>,
}

/// Seed for the member trained on `reference_id`.
pub fn member_seed(seed: u64, reference_id: &str) -> u64 {
    derive_seed(seed, reference_id)
}

/// Build and train the autoencoder for one reference. Initialisation and
/// shuffling both derive from `(config.seed, reference id)`.
pub fn pretrain_member<T: Scalar>(reference: &Dataset, config: &TrainConfig) -> Result<(AutoencoderModel<T>, TrainReport)> {
    let tag = |source: SimexError| SimexError::Reference {
        reference: reference.id().to_string(),
        source: Box::new(source),
    };
    if reference.is_empty() {
        return Err(tag(SimexError::Empty("reference dataset")));
    }
    let seed = member_seed(config.seed, reference.id());
    let mut model = build_autoencoder::<T>(reference.height(), reference.width(), seed).map_err(tag)?;
    let report = train(&mut model, reference, &config.clone().with_seed(seed)).map_err(tag)?;
    model.meta_mut().reference_id = Some(reference.id().to_string());
    Ok((model, report))
}

/// Train one member per reference, optionally in parallel. Members are
/// independent, so both modes produce identical parameters.
pub fn pretrain_fleet<T: Scalar>(references: &[Dataset], config: &TrainConfig, parallel: bool) -> Result<Fleet<T>> {
    if references.is_empty() {
        return Err(SimexError::Empty("reference list"));
    }
    let mut ids: Vec<&str> = references.iter().map(Dataset::id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(SimexError::invalid(format!("duplicate reference id `{}`", w[0])));
    }
    let trained: Vec<Result<(AutoencoderModel<T>, TrainReport)>> = if parallel {
        references.par_iter().map(|r| pretrain_member(r, config)).collect()
    } else {
        references.iter().map(|r| pretrain_member(r, config)).collect()
    };
    let mut members = BTreeMap::new();
    let mut reports = BTreeMap::new();
    for (reference, outcome) in references.iter().zip(trained) {
        let (model, report) = outcome?;
        members.insert(reference.id().to_string(), model);
        reports.insert(reference.id().to_string(), report);
    }
    Ok(Fleet {
        members,
        loss: config.loss,
        reports,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct FleetIndex {
    loss: LossKind,
    members: Vec<FleetEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FleetEntry {
    reference_id: String,
    file: String,
}

const INDEX_FILE: &str = "fleet.json";

impl<T: Scalar> Fleet<T> {
    /// Assemble a fleet from already trained members, keyed by their
    /// reference ids.
    pub fn from_members(members: Vec<AutoencoderModel<T>>) -> Result<Self> {
        let first = members.first().ok_or(SimexError::Empty("fleet members"))?;
        let loss = first
            .meta()
            .loss
            .ok_or_else(|| SimexError::invalid("fleet member was never trained"))?;
        let shape = first.input_shape();
        let mut map = BTreeMap::new();
        for m in members {
            let id = m
                .reference_id()
                .ok_or_else(|| SimexError::invalid("fleet member has no reference id"))?
                .to_string();
            if m.meta().loss != Some(loss) {
                return Err(SimexError::LossKindMismatch {
                    trained: m.meta().loss.map_or("none".into(), |l| l.to_string()),
                    requested: loss.to_string(),
                });
            }
            if m.input_shape() != shape {
                return Err(SimexError::shape(
                    "fleet member input",
                    &[shape.0, shape.1],
                    &[m.input_shape().0, m.input_shape().1],
                ));
            }
            if map.insert(id.clone(), m).is_some() {
                return Err(SimexError::invalid(format!("duplicate reference id `{id}`")));
            }
        }
        Ok(Fleet {
            members: map,
            loss,
            reports: BTreeMap::new(),
        })
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Reference ids in lexical order.
    pub fn reference_ids(&self) -> Vec<&str> {
        self.members.keys().map(String::as_str).collect()
    }

    pub fn member(&self, reference_id: &str) -> Option<&AutoencoderModel<T>> {
        self.members.get(reference_id)
    }

    pub fn members(&self) -> impl Iterator<Item = (&str, &AutoencoderModel<T>)> {
        self.members.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Training reports of members pretrained in this process.
    pub fn reports(&self) -> &BTreeMap<String, TrainReport> {
        &self.reports
    }

    /// Total pretraining wall time, the one-time cost of the fleet.
    pub fn pretrain_seconds(&self) -> f64 {
        self.reports.values().map(|r| r.wall_seconds).sum()
    }

    /// Write every member as a checkpoint plus a `fleet.json` index.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.members.len());
        for (i, (id, model)) in self.members.iter().enumerate() {
            let file = format!("member-{i:03}.ckpt");
            save_checkpoint(model, &dir.join(&file))?;
            entries.push(FleetEntry {
                reference_id: id.clone(),
                file,
            });
        }
        let index = FleetIndex {
            loss: self.loss,
            members: entries,
        };
        fs::write(dir.join(INDEX_FILE), serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let index: FleetIndex = serde_json::from_slice(&fs::read(dir.join(INDEX_FILE))?)?;
        let mut members = Vec::with_capacity(index.members.len());
        for entry in &index.members {
            let model: AutoencoderModel<T> = load_checkpoint(&dir.join(&entry.file))?;
            if model.reference_id() != Some(entry.reference_id.as_str()) {
                return Err(SimexError::Checkpoint {
                    path: dir.join(&entry.file),
                    reason: format!("expected reference `{}`", entry.reference_id),
                });
            }
            members.push(model);
        }
        let fleet = Fleet::from_members(members)?;
        if fleet.loss != index.loss {
            return Err(SimexError::LossKindMismatch {
                trained: fleet.loss.to_string(),
                requested: index.loss.to_string(),
            });
        }
        Ok(fleet)
    }
}

impl<T: Scalar> PartialEq for Fleet<T> {
    /// Members and loss only; timing reports are excluded.
    fn eq(&self, other: &Self) -> bool {
        self.loss == other.loss && self.members == other.members
    }
}
