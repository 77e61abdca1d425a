//! Pipeline configuration file (JSON).

use crate::dropout::{DropoutConfig, DropoutConfigError};
use crate::llmclient::EndpointConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoSection {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub quartile_table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropoutSection {
    pub dataset_rate: f64,
    pub sample_rate: f64,
    pub seed: Option<u64>,
}

impl Default for DropoutSection {
    fn default() -> Self {
        Self {
            dataset_rate: 0.5,
            sample_rate: 0.5,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateSection {
    /// Categories to tag via the annotator endpoint.
    pub llm_categories: Vec<String>,
    pub long_tail_threshold: f64,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        Self {
            llm_categories: vec!["domain".into(), "task".into(), "format".into()],
            long_tail_threshold: crate::dataset::DEFAULT_LONG_TAIL_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub io: IoSection,
    pub dropout: DropoutSection,
    pub annotate: AnnotateSection,
    pub annotator: Option<EndpointConfig>,
    pub judge: Option<EndpointConfig>,
    pub generator: Option<EndpointConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Dropout(#[from] DropoutConfigError),
    #[error("`build` requires a seed (--seed flag or dropout.seed in the config)")]
    MissingSeed,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: PipelineConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        config.dropout_config(Some(0)).map(|_| ())?;
        Ok(config)
    }

    /// Resolve the effective dropout config; a flag seed overrides the
    /// config seed, and `build` refuses to run without either.
    pub fn dropout_config(&self, seed_override: Option<u64>) -> Result<DropoutConfig, ConfigError> {
        let seed = seed_override
            .or(self.dropout.seed)
            .ok_or(ConfigError::MissingSeed)?;
        Ok(DropoutConfig::new(
            self.dropout.dataset_rate,
            self.dropout.sample_rate,
            seed,
        )?)
    }
}
