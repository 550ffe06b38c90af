//! Experiment manifest: a versioned TOML document whose every key is either
//! consumed or rejected.

use std::collections::BTreeSet;
use std::path::PathBuf;

use crust_core::{GreedyVariant, Mode, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Gaussian clusters; data, noise and initialisation all derive from the run seed.
    Synthetic {
        n: usize,
        test_n: usize,
        d: usize,
        num_clusters: usize,
        num_classes: usize,
        #[serde(default = "default_separation")]
        cluster_separation: f64,
        #[serde(default = "default_spread")]
        within_cluster_std: f64,
    },
    /// Datasets in the crate's text format. Relative paths resolve against the config file.
    File { train: PathBuf, test: PathBuf },
}

fn default_separation() -> f64 {
    6.0
}

fn default_spread() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    #[default]
    None,
    Symmetric { ratio: f64 },
    Asymmetric { ratio: f64, pair_map: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![32],
            init_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreedyKind {
    Naive,
    Lazy,
    Stochastic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub lr_schedule: Vec<(usize, f64)>,
    pub coreset_fraction: f64,
    pub sample_count: usize,
    pub mixup_alpha: f64,
    pub greedy: GreedyKind,
    /// Candidates drawn per step; required by, and only allowed with, stochastic greedy.
    pub stochastic_sample_size: Option<usize>,
    pub warmup_epochs: usize,
    pub batch_size: Option<usize>,
    /// One run per entry, each written to its own subdirectory.
    pub modes: Vec<Mode>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            learning_rate: t.learning_rate,
            lr_schedule: t.lr_schedule,
            coreset_fraction: t.coreset_fraction,
            sample_count: t.sample_count,
            mixup_alpha: t.mixup_alpha,
            greedy: GreedyKind::Lazy,
            stochastic_sample_size: None,
            warmup_epochs: t.warmup_epochs,
            batch_size: t.batch_size,
            modes: vec![Mode::CRUST],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Write a spectrum report every this many coreset epochs; 0 disables.
    pub spectrum_every: usize,
    /// Information-space dimension for spectrum reports; defaults to the class count.
    pub spectrum_cutoff: Option<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("crust-out"),
            checkpoint_every: 0,
            spectrum_every: 0,
            spectrum_cutoff: None,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(
                "schema",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema),
            ));
        }
        if self.model.hidden.contains(&0) {
            return Err(invalid("model.hidden", "layer widths must be positive"));
        }
        if !(self.model.init_scale >= 0.0 && self.model.init_scale.is_finite()) {
            return Err(invalid("model.init_scale", "must be finite and nonnegative"));
        }
        if let DataConfig::Synthetic { test_n: 0, .. } = self.data {
            return Err(invalid("data.test_n", "must be positive"));
        }
        let t = &self.train;
        if t.modes.is_empty() {
            return Err(invalid("train.modes", "at least one mode is required"));
        }
        let distinct: BTreeSet<&str> = t.modes.iter().map(|m| m.name()).collect();
        if distinct.len() != t.modes.len() {
            return Err(invalid("train.modes", "modes must be distinct"));
        }
        match (&t.greedy, t.stochastic_sample_size) {
            (GreedyKind::Stochastic, None) => {
                return Err(invalid("train.stochastic_sample_size", "required for stochastic greedy"))
            }
            (GreedyKind::Naive | GreedyKind::Lazy, Some(_)) => {
                return Err(invalid("train.stochastic_sample_size", "only valid with greedy = \"stochastic\""))
            }
            _ => {}
        }
        if let Some(0) = self.output.spectrum_cutoff {
            return Err(invalid("output.spectrum_cutoff", "must be positive"));
        }
        for &mode in &t.modes {
            self.train_config(mode)
                .validate()
                .map_err(|e| invalid("train", e))?;
        }
        Ok(())
    }

    pub fn train_config(&self, mode: Mode) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            learning_rate: t.learning_rate,
            lr_schedule: t.lr_schedule.clone(),
            coreset_fraction: t.coreset_fraction,
            sample_count: t.sample_count,
            mixup_alpha: t.mixup_alpha,
            greedy: match t.greedy {
                GreedyKind::Naive => GreedyVariant::Naive,
                GreedyKind::Lazy => GreedyVariant::Lazy,
                GreedyKind::Stochastic => GreedyVariant::Stochastic {
                    sample_size: t.stochastic_sample_size.unwrap_or(0),
                },
            },
            seed: self.seed,
            mode,
            warmup_epochs: t.warmup_epochs,
            batch_size: t.batch_size,
            forced_lambda: None,
        }
    }

    /// SHA-256 of the canonical JSON form, so formatting and key order in the
    /// source file do not matter.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        hex(&Sha256::digest(canonical.as_bytes()))
    }
}

/// Git blob hash (SHA-256 object format) of `content`.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
