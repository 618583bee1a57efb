//! The run configuration: one JSON document, optionally overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use simex_core::baselines::PairSampling;
use simex_core::data::{load_idx, split, synth_generate, take_subset, Dataset, SplitSpec, SynthSpec};
use simex_core::loss::LossKind;
use simex_core::models::TrainConfig;
use simex_core::tensor::{OptimizerConfig, OptimizerKind};

use crate::error::{CliError, Context};

/// Bumped whenever a report or config field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

/// The published JSON schema for [`RunConfig`].
pub const RUN_CONFIG_SCHEMA: &str = include_str!("../schema/run-config.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Pretrain,
    Compare,
    Pair,
    Confusion,
    Bench,
    Synth,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Compare => "compare",
            Command::Pair => "pair",
            Command::Confusion => "confusion",
            Command::Bench => "bench",
            Command::Synth => "synth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    Synth {
        spec: SynthSpec,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
}

/// Where a dataset comes from and which part of it to keep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    pub id: String,
    pub source: DatasetSource,
    /// Keep only samples with these labels (original label values kept).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<usize>>,
    /// Keep at most this many samples, chosen by seeded content key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

impl DatasetDescriptor {
    pub fn synth(id: impl Into<String>, spec: SynthSpec, seed: u64) -> Self {
        DatasetDescriptor {
            id: id.into(),
            source: DatasetSource::Synth { spec, seed },
            classes: None,
            limit: None,
        }
    }

    /// Materialize the dataset. Relative IDX paths resolve against `base`.
    pub fn load(&self, base: &Path, seed: u64) -> Result<Dataset, CliError> {
        let what = || format!("dataset `{}`", self.id);
        let mut d = match &self.source {
            DatasetSource::Synth { spec, seed } => synth_generate(spec, *seed).context(what)?,
            DatasetSource::Idx { images, labels } => {
                let labels = labels.as_ref().map(|l| base.join(l));
                load_idx(&base.join(images), labels.as_deref()).context(what)?
            }
        };
        if let Some(keep) = &self.classes {
            d = d.remap_labels(|c| keep.contains(&c).then_some(c), d.id().to_string()).context(what)?;
        }
        if let Some(limit) = self.limit {
            d = take_subset(&d, limit, seed);
        }
        Ok(d.with_id(self.id.clone()))
    }
}

fn default_repeats() -> usize {
    5
}

fn default_parallel() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("simex-out")
}

fn default_train() -> TrainConfig {
    TrainConfig::new(OptimizerConfig::with_default_rate(OptimizerKind::Rmsprop), LossKind::Mse, 20)
}

fn default_classifier() -> TrainConfig {
    TrainConfig::new(OptimizerConfig::with_default_rate(OptimizerKind::Adam), LossKind::Mse, 10).with_batch_size(64)
}

fn default_transfer_epochs() -> usize {
    100
}

fn default_patience() -> usize {
    3
}

fn default_gallery_count() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalleryConfig {
    /// Fleet member whose reconstructions are drawn; the first one if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member: Option<String>,
    /// Samples drawn from each unknown.
    #[serde(default = "default_gallery_count")]
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Root seed. `train.seed` and `classifier.seed` are offsets from it;
    /// splits and subsets use it directly.
    #[serde(default)]
    pub seed: u64,
    /// Reference datasets: one fleet member each, or one per class for
    /// `pair`. For `bench`, the first is the base dataset; for `confusion`,
    /// the first is the labeled dataset probed.
    #[serde(default)]
    pub references: Vec<DatasetDescriptor>,
    #[serde(default)]
    pub unknowns: Vec<DatasetDescriptor>,
    /// Fleet training; `loss` here is overridden by the top-level `loss`.
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    /// Classifier training for `bench` and `confusion`.
    #[serde(default = "default_classifier")]
    pub classifier: TrainConfig,
    #[serde(default = "default_transfer_epochs")]
    pub transfer_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Train references on the train part and evaluate unknowns on the
    /// held-out part of this split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<SplitSpec>,
    /// Divide each Δ column by its reference's mean L2 norm.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default = "default_parallel")]
    pub parallel: bool,
    /// Load the fleet from this directory instead of training it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fleet_dir: Option<PathBuf>,
    /// Load the bench base classifier from this checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gallery: Option<GalleryConfig>,
    #[serde(default)]
    pub sampling: PairSampling,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Flag values that replace top-level config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub loss: Option<LossKind>,
    pub fleet_dir: Option<PathBuf>,
    pub parallel: Option<bool>,
}

impl RunConfig {
    /// Parse a config document; errors name the offending field path.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            CliError::config(origin, field, e.into_inner().to_string())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(path, ".", e.to_string()))?;
        Self::from_json(&text, path)
    }

    pub fn apply(&mut self, o: Overrides) {
        if o.command.is_some() {
            self.command = o.command;
        }
        if let Some(v) = o.output_dir {
            self.output_dir = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.repeats {
            self.repeats = v;
        }
        if o.loss.is_some() {
            self.loss = o.loss;
        }
        if o.fleet_dir.is_some() {
            self.fleet_dir = o.fleet_dir;
        }
        if let Some(v) = o.parallel {
            self.parallel = v;
        }
    }

    /// Fleet training config with the loss override and root seed applied.
    pub fn fleet_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(loss) = self.loss {
            t.loss = loss;
        }
        t.seed = self.seed.wrapping_add(t.seed);
        t
    }

    pub fn classifier_train(&self) -> TrainConfig {
        let mut t = self.classifier.clone();
        t.seed = self.seed.wrapping_add(t.seed);
        t
    }

    /// Check everything that can be checked before any work starts.
    /// Relative paths resolve against `base`.
    pub fn validate(&self, origin: &Path, base: &Path) -> Result<Command, CliError> {
        let err = |field: &str, msg: String| CliError::config(origin, field, msg);
        let command = self.command.ok_or_else(|| err("command", "no command given".into()))?;
        if self.repeats == 0 {
            return Err(err("repeats", "must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(err("patience", "must be at least 1".into()));
        }
        self.fleet_train().validate().map_err(|e| err("train", e.to_string()))?;
        self.classifier.validate().map_err(|e| err("classifier", e.to_string()))?;
        if let Some(h) = self.holdout {
            if !(h.train_fraction > 0.0 && h.train_fraction < 1.0) {
                return Err(err("holdout.train_fraction", "must lie strictly between 0 and 1".into()));
            }
        }
        let lists = [("references", &self.references), ("unknowns", &self.unknowns)];
        for (name, list) in lists {
            let mut seen = std::collections::BTreeSet::new();
            for (i, d) in list.iter().enumerate() {
                if !seen.insert(d.id.as_str()) {
                    return Err(err(&format!("{name}[{i}].id"), format!("duplicate id `{}`", d.id)));
                }
                if let DatasetSource::Idx { images, labels } = &d.source {
                    for (field, p) in [("images", Some(images)), ("labels", labels.as_ref())] {
                        if let Some(p) = p {
                            if !base.join(p).exists() {
                                return Err(err(
                                    &format!("{name}[{i}].source.{field}"),
                                    format!("{} does not exist", base.join(p).display()),
                                ));
                            }
                        }
                    }
                }
            }
        }
        for (field, p) in [("fleet_dir", &self.fleet_dir), ("classifier_checkpoint", &self.classifier_checkpoint)] {
            if let Some(p) = p {
                if !base.join(p).exists() {
                    return Err(err(field, format!("{} does not exist", base.join(p).display())));
                }
            }
        }
        let need = |ok: bool, field: &str, what: &str| if ok { Ok(()) } else { Err(err(field, what.into())) };
        match command {
            Command::Pretrain => need(!self.references.is_empty(), "references", "pretrain needs references")?,
            Command::Compare => {
                need(!self.references.is_empty() || self.fleet_dir.is_some(), "references", "compare needs references or a fleet_dir")?;
                need(!self.unknowns.is_empty(), "unknowns", "compare needs unknowns")?;
                need(!self.normalize || !self.references.is_empty(), "normalize", "normalizing needs the reference datasets")?;
            }
            Command::Pair => {
                need(self.references.len() == 1, "references", "pair needs exactly one labeled reference dataset")?;
                need(self.unknowns.len() == 1, "unknowns", "pair needs exactly one labeled unknown dataset")?;
            }
            Command::Confusion => need(self.references.len() == 1, "references", "confusion needs exactly one labeled dataset")?,
            Command::Bench => {
                need(self.references.len() == 1, "references", "bench needs exactly one base dataset")?;
                need(self.unknowns.len() == 1, "unknowns", "bench needs exactly one target dataset")?;
            }
            Command::Synth => need(
                !self.references.is_empty() || !self.unknowns.is_empty(),
                "references",
                "synth needs at least one dataset",
            )?,
        }
        Ok(command)
    }
}

/// Optional held-out split: references keep the train part, unknowns the
/// test part.
pub fn holdout_part(d: Dataset, holdout: Option<SplitSpec>, train_part: bool) -> Result<Dataset, CliError> {
    match holdout {
        None => Ok(d),
        Some(spec) => {
            let id = d.id().to_string();
            let (train, test) = split(&d, spec).context(|| format!("splitting `{id}`"))?;
            Ok(if train_part { train } else { test }.with_id(id))
        }
    }
}
