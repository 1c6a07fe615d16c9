//! Experiment configuration, read from TOML.
//!
//! ```toml
//! version = 1
//!
//! [model]
//! num_tokens = 256
//! hidden_dim = 32
//! num_blocks = 4
//! num_steps = 24
//! step_size = 0.1
//! weight_seed = 0
//! latent_seed = 0
//!
//! [tr]
//! ratio = 0.25
//! lambda = 1.0
//! tau = 0.9
//! top_k = 5
//! metric = "cosine"          # or "neg_sq_dist"
//! mode = "prune"             # or "merge"
//! partition = { kind = "strided", stride = 2 }
//! # scope: "shared" or "per_block"; increment: "per_call" or "per_step"
//! history = { scope = "shared", increment = "per_call" }
//!
//! [calibration]
//! seeds = [0, 1, 2, 3, 4, 5, 6, 7]
//! # max_delta = 23           # defaults to num_steps - 1
//!
//! [evaluation]
//! first_seed = 100
//! num_seeds = 16
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Metric;
use crate::matching::PartitionStrategy;
use crate::model::ModelConfig;
use crate::penalty::HistoryPolicy;
use crate::pipeline::{RunConfig, Variant};
use crate::reduce::ReduceMode;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrConfig {
    pub ratio: f64,
    pub lambda: f64,
    pub tau: f64,
    pub top_k: usize,
    pub metric: Metric,
    pub mode: ReduceMode,
    pub partition: PartitionStrategy,
    pub history: HistoryPolicy,
}

impl Default for TrConfig {
    fn default() -> Self {
        let run = RunConfig::default();
        TrConfig {
            ratio: run.ratio,
            lambda: run.lambda,
            tau: run.tau,
            top_k: run.top_k,
            metric: run.metric,
            mode: run.mode,
            partition: run.partition,
            history: run.history,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Latent seeds of the offline calibration trajectories.
    pub seeds: Vec<u64>,
    /// Largest reuse interval tabulated; `None` means `num_steps - 1`.
    pub max_delta: Option<usize>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            seeds: (0..8).collect(),
            max_delta: None,
        }
    }
}

/// Held-out latent seeds for comparisons: `first_seed..first_seed + num_seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub first_seed: u64,
    pub num_seeds: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            first_seed: 100,
            num_seeds: 16,
        }
    }
}

impl EvaluationConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (self.first_seed..self.first_seed + self.num_seeds as u64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub model: ModelConfig,
    pub tr: TrConfig,
    pub calibration: CalibrationConfig,
    pub evaluation: EvaluationConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            model: ModelConfig::default(),
            tr: TrConfig::default(),
            calibration: CalibrationConfig::default(),
            evaluation: EvaluationConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::internal(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.run_config(Variant::Dense).validate()?;
        if self.calibration.seeds.is_empty() {
            return Err(Error::config("calibration.seeds must not be empty"));
        }
        if self.max_delta() >= self.model.num_steps {
            return Err(Error::config(format!(
                "calibration.max_delta must be below num_steps ({})",
                self.model.num_steps
            )));
        }
        if self.evaluation.num_seeds == 0 {
            return Err(Error::config("evaluation.num_seeds must be >= 1"));
        }
        Ok(())
    }

    pub fn max_delta(&self) -> usize {
        self.calibration
            .max_delta
            .unwrap_or(self.model.num_steps.saturating_sub(1))
    }

    pub fn run_config(&self, variant: Variant) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            ratio: self.tr.ratio,
            lambda: self.tr.lambda,
            tau: self.tr.tau,
            top_k: self.tr.top_k,
            metric: self.tr.metric,
            mode: self.tr.mode,
            partition: self.tr.partition,
            history: self.tr.history,
            variant,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.max_delta(), 23);
        assert_eq!(cfg.evaluation.seeds().len(), 16);
    }

    #[test]
    fn module_doc_example_parses_to_defaults() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(ExperimentConfig::from_toml_str(&doc).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn partial_sections_and_round_trip() {
        let cfg = ExperimentConfig::from_toml_str(
            "[tr]\nratio = 0.5\nmetric = \"neg_sq_dist\"\npartition = { kind = \"random\", stride = 2, seed = 9 }\n",
        )
        .unwrap();
        assert_eq!(cfg.tr.ratio, 0.5);
        assert_eq!(cfg.tr.metric, Metric::NegSqDist);
        assert_eq!(cfg.tr.partition, PartitionStrategy::Random { stride: 2, seed: 9 });
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.tr.history, HistoryPolicy::default());
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for text in [
            "colour = 1",
            "[model]\nnum_tokenz = 4",
            "[tr]\nratio = 2.0",
            "[tr]\ntau = 0.0",
            "[tr]\nlambda = -1.0",
            "[model]\nnum_tokens = 10",
            "version = 2",
            "[calibration]\nseeds = []",
            "[calibration]\nmax_delta = 24",
            "[tr]\nhistory = { scope = \"per_token\" }",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }
}
