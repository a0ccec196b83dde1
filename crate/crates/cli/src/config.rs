//! TOML run configuration.
//!
//! Every key has a default; unknown keys are rejected. The echo written into
//! artifacts is the fully materialized config, so feeding it back through
//! `--config` reproduces the run.

use std::path::{Path, PathBuf};

use metalearn_core::datagen::{GenConfig, LabelSource, TauPolicy};
use metalearn_core::metaopt::TrainConfig;
use metalearn_core::model::ModelShape;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub learner: LearnerSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_in: usize,
    pub n_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSection {
    pub fc_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSourceName {
    Clean,
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_samples: usize,
    pub beta_noise: f64,
    pub balance_min: f64,
    pub max_rejects: usize,
    pub label_source: LabelSourceName,
    pub min_train_frac: f64,
    pub max_train_frac: f64,
    pub train_frac_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub iterations: u64,
    pub pool_size: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// 0 disables clipping.
    pub clip_norm: f64,
    /// Progress line cadence; 0 silences progress.
    pub log_every: u64,
    /// Checkpoint to continue from; empty starts fresh.
    pub resume_from: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelSection::default(),
            learner: LearnerSection::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { n_in: 5, n_hidden: 32 }
    }
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            fc_sizes: vec![128, 256],
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            n_samples: g.n_samples,
            beta_noise: g.beta_noise,
            balance_min: g.balance_min,
            max_rejects: g.max_rejects,
            label_source: LabelSourceName::Clean,
            min_train_frac: g.tau_policy.min_train_frac,
            max_train_frac: g.tau_policy.max_train_frac,
            train_frac_step: g.tau_policy.step,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            iterations: 10_000,
            pool_size: 10_000,
            checkpoint_every: 0,
            clip_norm: 0.0,
            log_every: 100,
            resume_from: PathBuf::new(),
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("checkpoint.bin"),
            loss_log: PathBuf::from("loss.tsv"),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        cfg.gen_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Loads `path` if given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Fully materialized TOML text.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn echo_sha256(&self) -> String {
        hex::encode(Sha256::digest(self.echo().as_bytes()))
    }

    pub fn model_shape(&self) -> CliResult<ModelShape> {
        ModelShape::new(self.model.n_in, self.model.n_hidden)
            .map_err(|e| CliError::usage(format!("invalid [model]: {e}")))
    }

    pub fn gen_config(&self) -> CliResult<GenConfig> {
        let d = &self.data;
        let gen = GenConfig {
            n_in: self.model.n_in,
            n_samples: d.n_samples,
            beta_noise: d.beta_noise,
            balance_min: d.balance_min,
            tau_policy: TauPolicy {
                min_train_frac: d.min_train_frac,
                max_train_frac: d.max_train_frac,
                step: d.train_frac_step,
            },
            max_rejects: d.max_rejects,
            label_source: match d.label_source {
                LabelSourceName::Clean => LabelSource::Clean,
                LabelSourceName::Noisy => LabelSource::Noisy,
            },
        };
        gen.validate()
            .map_err(|e| CliError::usage(format!("invalid [data]: {e}")))?;
        Ok(gen)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            model: self.model_shape()?,
            fc_sizes: self.learner.fc_sizes.clone(),
            gen: self.gen_config()?,
            learning_rate: t.learning_rate,
            iterations: t.iterations,
            seed: self.seed,
            pool_size: t.pool_size,
            checkpoint_every: t.checkpoint_every,
            clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
        };
        cfg.validate()
            .map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.learner.fc_sizes = vec![8, 8];
        cfg.data.label_source = LabelSourceName::Noisy;
        cfg.train.clip_norm = 2.5;
        let back = RunConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.echo(), cfg.echo());
    }

    #[test]
    fn empty_text_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        let gen = RunConfig::default().gen_config().unwrap();
        assert_eq!(gen, GenConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["bogus = 1", "[model]\nn_out = 2", "[nope]\n"] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(matches!(err, CliError::Usage(_)), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let err = RunConfig::parse("[data]\nbeta_noise = -1.0").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let cfg = RunConfig::parse("[train]\nlearning_rate = 0.0").unwrap();
        assert_eq!(cfg.train_config().unwrap_err().exit_code(), 2);
    }
}
