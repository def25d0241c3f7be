//! Declarative experiment configuration.
//!
//! One TOML file describes one experiment: a strategy grid, a pretraining
//! ablation sweep, or the four-setup freezing comparison. Every constant
//! the training loops consume appears in the resolved snapshot saved next
//! to the results, and the content hash of that snapshot names the run
//! directory, so identical configs land in identical directories and are
//! never recomputed unless forced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::ClassifierSpec;
use crate::error::{Error, Result};
use crate::replay::{ReplayStrategy, TrainConfig};
use crate::scenario::{DatasetId, FreezeSetup, PretrainConfig};

/// A strategy in config syntax: either the frequency vector itself or a
/// named alias (`IR` for one-hot level 0; `GR` marks image-space replay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategySpec {
    Alias(String),
    Frequencies(Vec<f64>),
}

impl StrategySpec {
    /// Resolve against an architecture with `levels` hidden layers.
    pub fn resolve(&self, levels: usize) -> Result<ReplayStrategy> {
        match self {
            StrategySpec::Frequencies(f) => {
                let s = ReplayStrategy::new(f.clone())?;
                if s.len() != levels {
                    return Err(Error::config(format!(
                        "strategy {f:?} has {} levels but the architecture has {levels}",
                        s.len()
                    )));
                }
                Ok(s)
            }
            StrategySpec::Alias(a) => match a.as_str() {
                "IR" => Ok(ReplayStrategy::internal_replay(levels)),
                "GR" => Err(Error::config(
                    "GR is image-space replay; use mode = \"gr\" instead of a strategy alias",
                )),
                other => Err(Error::config(format!(
                    "unknown strategy alias '{other}' (expected IR)"
                ))),
            },
        }
    }

    /// Parse a CLI argument: `IR`, `GR`, or comma-separated frequencies.
    pub fn parse_arg(arg: &str) -> Result<StrategySpec> {
        let trimmed = arg.trim();
        if trimmed.eq_ignore_ascii_case("ir") {
            return Ok(StrategySpec::Alias("IR".into()));
        }
        if trimmed.eq_ignore_ascii_case("gr") {
            return Ok(StrategySpec::Alias("GR".into()));
        }
        let cleaned = trimmed.trim_start_matches('[').trim_end_matches(']');
        let freqs: std::result::Result<Vec<f64>, _> =
            cleaned.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match freqs {
            Ok(f) if !f.is_empty() => Ok(StrategySpec::Frequencies(f)),
            _ => Err(Error::config(format!(
                "cannot parse strategy '{arg}' (expected IR or e.g. 0.7,0.3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// Feature-space generative replay at strategy-given levels.
    Generative,
    /// Feature-buffer replay at strategy-given levels.
    Buffer,
    /// Image-space generative replay through the whole network.
    Gr,
}

impl ReplayMode {
    pub fn name(&self) -> &'static str {
        match self {
            ReplayMode::Generative => "generative",
            ReplayMode::Buffer => "buffer",
            ReplayMode::Gr => "gr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// strategy grid x seeds (the table experiments)
    Grid,
    /// pretraining-ablation sweep (class counts x augmentation)
    Fig3,
    /// the four freezing setups on a simple dataset
    Fig4,
}

impl Default for ExperimentKind {
    fn default() -> Self {
        ExperimentKind::Grid
    }
}

fn default_batch() -> usize {
    256
}
fn default_steps() -> usize {
    200
}
fn default_lr() -> f32 {
    1e-4
}
fn default_temperature() -> f32 {
    2.0
}
fn default_latent() -> usize {
    100
}
fn default_buffer_capacity() -> usize {
    512
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_true() -> bool {
    true
}
fn default_mfid_samples() -> usize {
    10_000
}
fn default_image_vae_hidden() -> Vec<usize> {
    vec![256, 256]
}
fn default_reference_epochs() -> usize {
    5
}

/// The experiment description as written by the user, with full defaulting.
/// The resolved (post-default) form is what gets hashed and snapshotted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub experiment: ExperimentKind,
    pub dataset: DatasetId,
    /// Architecture preset name: ARCH1, ARCH2 or FMNIST3.
    pub architecture: String,
    pub mode: ReplayMode,
    #[serde(default)]
    pub strategy: Option<StrategySpec>,
    #[serde(default)]
    pub strategies: Vec<StrategySpec>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub replay_batch_size: Option<usize>,
    #[serde(default = "default_steps")]
    pub steps_per_task: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f32,
    #[serde(default = "default_temperature")]
    pub distill_temperature: f32,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    #[serde(default)]
    pub conditional_generator: bool,
    #[serde(default = "default_buffer_capacity")]
    pub buffer_capacity: usize,
    #[serde(default)]
    pub buffer_insert_all_steps: bool,
    /// Freeze the extractor once the first task finishes (the
    /// pretraining-free route to a stable feature space).
    #[serde(default)]
    pub freeze_extractor_after_task1: bool,
    /// Freeze the extractor immediately after importing pretrained weights.
    #[serde(default = "default_true")]
    pub freeze_pretrained_extractor: bool,
    #[serde(default)]
    pub permute_classes: bool,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub pretrain: Option<PretrainConfig>,
    /// Fig3 sweep axes.
    #[serde(default)]
    pub pretrain_class_counts: Vec<usize>,
    #[serde(default)]
    pub pretrain_augmentation: Vec<bool>,
    /// Fig4 setups.
    #[serde(default)]
    pub setups: Vec<String>,
    #[serde(default = "default_image_vae_hidden")]
    pub image_vae_hidden: Vec<usize>,
    #[serde(default)]
    pub compute_mfid: bool,
    #[serde(default = "default_mfid_samples")]
    pub mfid_samples: usize,
    #[serde(default)]
    pub mfid_injection_level: usize,
    /// Joint-training epochs for the cached mFID reference model.
    #[serde(default = "default_reference_epochs")]
    pub reference_epochs: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&raw)
    }

    pub fn classifier_spec(&self) -> Result<ClassifierSpec> {
        ClassifierSpec::preset(&self.architecture)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            replay_batch_size: self.replay_batch_size.unwrap_or(self.batch_size),
            steps_per_task: self.steps_per_task,
            learning_rate: self.learning_rate,
            distill_temperature: self.distill_temperature,
            buffer_insert_all_steps: self.buffer_insert_all_steps,
        }
    }

    /// The strategy grid for grid experiments (singular `strategy` and
    /// plural `strategies` both accepted, not together).
    pub fn strategy_grid(&self) -> Result<Vec<StrategySpec>> {
        match (&self.strategy, self.strategies.is_empty()) {
            (Some(s), true) => Ok(vec![s.clone()]),
            (None, false) => Ok(self.strategies.clone()),
            (Some(_), false) => Err(Error::config(
                "specify either 'strategy' or 'strategies', not both",
            )),
            (None, true) => Err(Error::config("a grid experiment needs a strategy")),
        }
    }

    /// Validate everything that can fail before any compute starts.
    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.name.trim().is_empty() {
            problems.push("name must be non-empty".to_string());
        }
        if self.seeds.is_empty() {
            problems.push("seeds must be non-empty".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if self.steps_per_task == 0 {
            problems.push("steps_per_task must be positive".to_string());
        }
        let spec = match self.classifier_spec() {
            Ok(s) => Some(s),
            Err(e) => {
                problems.push(e.to_string());
                None
            }
        };
        if let Some(spec) = &spec {
            if spec.extractor.input_shape() != self.dataset.image_shape() {
                problems.push(format!(
                    "architecture {} expects input {:?} but dataset {} provides {:?}",
                    self.architecture,
                    spec.extractor.input_shape(),
                    self.dataset.name(),
                    self.dataset.image_shape()
                ));
            }
            if spec.num_classes < self.dataset.num_classes() {
                problems.push(format!(
                    "architecture {} has {} output units but dataset {} has {} classes",
                    self.architecture,
                    spec.num_classes,
                    self.dataset.name(),
                    self.dataset.num_classes()
                ));
            }
        }
        match self.experiment {
            ExperimentKind::Grid => {
                let mut has_image_cell = self.mode == ReplayMode::Gr;
                match self.strategy_grid() {
                    Ok(grid) => {
                        if let Some(spec) = &spec {
                            for s in &grid {
                                // the GR alias names an image-space cell,
                                // not a frequency vector
                                if matches!(s, StrategySpec::Alias(a) if a == "GR") {
                                    has_image_cell = true;
                                    continue;
                                }
                                if let Err(e) = s.resolve(spec.num_levels()) {
                                    problems.push(e.to_string());
                                }
                            }
                        }
                    }
                    Err(e) => {
                        if self.mode != ReplayMode::Gr {
                            problems.push(e.to_string());
                        }
                    }
                }
                if has_image_cell && self.dataset.image_shape().0 != 1 {
                    problems.push("image-space GR is only wired for single-channel datasets".into());
                }
            }
            ExperimentKind::Fig3 => {
                if self.pretrain_class_counts.is_empty() {
                    problems.push("fig3 needs pretrain_class_counts".to_string());
                }
                if self.pretrain_augmentation.is_empty() {
                    problems.push("fig3 needs pretrain_augmentation".to_string());
                }
                if self.pretrain.is_none() {
                    problems.push("fig3 needs a [pretrain] section".to_string());
                }
            }
            ExperimentKind::Fig4 => {
                if self.setups.is_empty() {
                    problems.push("fig4 needs a setups list".to_string());
                }
                for s in &self.setups {
                    if let Err(e) = FreezeSetup::parse(s) {
                        problems.push(e.to_string());
                    }
                }
                if self.dataset.image_shape().0 != 1 {
                    problems.push("fig4 runs on a single-channel dataset".to_string());
                }
            }
        }
        if let Some(p) = &self.pretrain {
            if p.num_classes_used < 2 {
                problems.push("pretrain.num_classes_used must be at least 2".to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }

    /// Content hash of the resolved config, excluding filesystem locations
    /// so that moving outputs or data does not change run identity.
    pub fn content_hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
            obj.remove("data_dir");
        }
        let canonical = serde_json::to_string(&v)?;
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        let digest = h.finalize();
        Ok(hex_prefix(&digest, 12))
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.output_dir.join(format!("{}-{}", self.name, self.content_hash()?)))
    }
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        use std::fmt::Write;
        write!(s, "{b:02x}").unwrap();
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}
