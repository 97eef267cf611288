//! Experiment configuration: one JSON document covering data generation,
//! training, evaluation and output placement. Every field has a default, so
//! `{}` is a complete config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SelsaError};
use crate::eval::EvalConfig;
use crate::synthetic::SyntheticSpec;
use crate::training::{AggregationMode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticSpec,
    /// Shared by every mode; `train.aggregation_mode` is overridden per mode.
    pub train: TrainConfig,
    /// Modes trained and evaluated, in order.
    pub modes: Vec<AggregationMode>,
    pub n_train_videos: usize,
    pub n_eval_videos: usize,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
    /// When set, replaces `synthetic.seed` and `train.seed`.
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synthetic: SyntheticSpec::default(),
            train: TrainConfig::default(),
            modes: AggregationMode::ALL.to_vec(),
            n_train_videos: 32,
            n_eval_videos: 4,
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file. Unknown keys and invalid values are errors.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SelsaError::io(path, e))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| SelsaError::json(path, e))?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Applies the global seed, if any, to the nested seeds.
    pub fn resolved(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.synthetic.seed = seed;
            self.train.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.modes.is_empty() {
            return Err(SelsaError::Config(
                "modes: at least one mode is required".into(),
            ));
        }
        let mut seen = self.modes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.modes.len() {
            return Err(SelsaError::Config("modes: duplicate entries".into()));
        }
        if self.n_train_videos == 0 {
            return Err(SelsaError::Config(
                "n_train_videos: must be positive".into(),
            ));
        }
        if self.n_eval_videos == 0 {
            return Err(SelsaError::Config("n_eval_videos: must be positive".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(SelsaError::Config("output_dir: must not be empty".into()));
        }
        Ok(())
    }

    /// Training config for one mode.
    pub fn train_for(&self, mode: AggregationMode) -> TrainConfig {
        TrainConfig {
            aggregation_mode: mode,
            ..self.train.clone()
        }
    }
}
