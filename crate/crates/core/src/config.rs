//! Run configuration, loadable from a versioned TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendSpec, EndpointConfig};
use crate::discriminator::TrainConfig;
use crate::proposer::{ProposerConfig, DEFAULT_FORBIDDEN};

pub const CONFIG_FORMAT: &str = "distdescribe-config-v1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; the pair, prompt and discriminator seeds default to it.
    pub seed: u64,
    pub pair_seed: Option<u64>,
    pub prompt_seed: Option<u64>,
    pub n_pairs: usize,
    /// Score every cross pair instead of sampling `n_pairs`.
    pub exhaustive: bool,
    pub top_k: usize,
    pub percentiles: Vec<u32>,
    pub samples_per_group: usize,
    pub sets_per_percentile: usize,
    pub completions_per_set: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    pub forbidden_tokens: Vec<String>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub in_flight: usize,
    /// Abort when more than this fraction of judgments abstain.
    pub max_abstention: f64,
    pub proposer_backend: BackendSpec,
    pub verifier_backend: BackendSpec,
    pub proposer_endpoint: EndpointConfig,
    pub verifier_endpoint: EndpointConfig,
    /// Persistent judgment cache (jsonl).
    pub cache: Option<String>,
    /// Where the report document goes. Not echoed into reports.
    #[serde(skip_serializing)]
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ProposerConfig::default();
        let t = TrainConfig::default();
        Self {
            seed: 0,
            pair_seed: None,
            prompt_seed: None,
            n_pairs: crate::verifier::DEFAULT_N_PAIRS,
            exhaustive: false,
            top_k: 5,
            percentiles: p.percentiles,
            samples_per_group: p.samples_per_group,
            sets_per_percentile: p.sets_per_percentile,
            completions_per_set: p.completions_per_set,
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            stop: p.stop,
            forbidden_tokens: DEFAULT_FORBIDDEN.iter().map(|s| s.to_string()).collect(),
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            in_flight: p.in_flight,
            max_abstention: 0.5,
            proposer_backend: BackendSpec::Rule,
            verifier_backend: BackendSpec::Rule,
            proposer_endpoint: EndpointConfig::default(),
            verifier_endpoint: EndpointConfig::default(),
            cache: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn pair_seed(&self) -> u64 {
        self.pair_seed.unwrap_or(self.seed)
    }

    pub fn prompt_seed(&self) -> u64 {
        self.prompt_seed.unwrap_or(self.seed)
    }

    /// Copy with derived seeds filled in, as echoed into reports.
    pub fn effective(&self) -> Self {
        Self {
            pair_seed: Some(self.pair_seed()),
            prompt_seed: Some(self.prompt_seed()),
            ..self.clone()
        }
    }

    pub fn proposer(&self) -> ProposerConfig {
        ProposerConfig {
            percentiles: self.percentiles.clone(),
            sets_per_percentile: self.sets_per_percentile,
            samples_per_group: self.samples_per_group,
            completions_per_set: self.completions_per_set,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            stop: self.stop.clone(),
            forbidden_tokens: self.forbidden_tokens.clone(),
            seed: self.prompt_seed(),
            in_flight: self.in_flight,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_pairs == 0 {
            return Err("n_pairs must be at least 1".into());
        }
        if self.top_k == 0 {
            return Err("top_k must be at least 1".into());
        }
        if self.percentiles.is_empty() || self.percentiles.iter().any(|&p| p == 0 || p > 100) {
            return Err("percentiles must be non-empty and within 1..=100".into());
        }
        if !(1..=crate::proposer::MAX_GROUP_SAMPLES).contains(&self.samples_per_group) {
            return Err("samples_per_group must be within 1..=5".into());
        }
        if self.sets_per_percentile == 0 || self.completions_per_set == 0 {
            return Err("sets_per_percentile and completions_per_set must be at least 1".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_abstention) {
            return Err("max_abstention must be within [0, 1]".into());
        }
        Ok(())
    }

    /// Parses a config document. The first key must be
    /// `format = "distdescribe-config-v1"`; every other key mirrors a field.
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        match table.remove("format") {
            Some(toml::Value::String(f)) if f == CONFIG_FORMAT => {}
            Some(other) => return Err(format!("unsupported format {other}, expected \"{CONFIG_FORMAT}\"")),
            None => return Err(format!("missing `format = \"{CONFIG_FORMAT}\"`")),
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|message| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn to_toml_string(&self) -> String {
        let mut table = match toml::Value::try_from(self).expect("config serializes") {
            toml::Value::Table(t) => t,
            _ => unreachable!("config is a table"),
        };
        if let Some(out) = &self.out {
            table.insert("out".into(), toml::Value::String(out.clone()));
        }
        format!(
            "format = \"{CONFIG_FORMAT}\"\n{}",
            toml::to_string(&table).expect("table serializes")
        )
    }
}
