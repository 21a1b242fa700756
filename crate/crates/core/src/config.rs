//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::labels::PerceivedAxis;
use crate::services::{Endpoint, RetryPolicy};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Endpoints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<Endpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphrase: Option<Endpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa: Option<Endpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub endpoints: Endpoints,
    pub corpus_spec: PathBuf,
    /// Every stage writes its output here.
    pub manifest_dir: PathBuf,
    #[serde(default = "defaults::parallelism")]
    pub max_parallel: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::seeds")]
    pub seeds_per_prompt: u32,
    #[serde(default)]
    pub seed_base: u64,
    pub model_tag: String,
    #[serde(default = "defaults::side")]
    pub width: u32,
    #[serde(default = "defaults::side")]
    pub height: u32,
    #[serde(default = "defaults::axes")]
    pub axes: Vec<PerceivedAxis>,
    /// Report of an earlier run to compute improvements against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_report: Option<PathBuf>,
}

mod defaults {
    use crate::labels::PerceivedAxis;

    pub fn parallelism() -> usize {
        4
    }

    pub fn tau() -> f64 {
        0.8
    }

    pub fn seeds() -> u32 {
        10
    }

    pub fn side() -> u32 {
        512
    }

    pub fn axes() -> Vec<PerceivedAxis> {
        PerceivedAxis::ALL.to_vec()
    }
}

impl PipelineConfig {
    pub fn new(corpus_spec: impl Into<PathBuf>, manifest_dir: impl Into<PathBuf>, model_tag: impl Into<String>) -> Self {
        PipelineConfig {
            endpoints: Endpoints::default(),
            corpus_spec: corpus_spec.into(),
            manifest_dir: manifest_dir.into(),
            max_parallel: defaults::parallelism(),
            retry: RetryPolicy::default(),
            tau: defaults::tau(),
            seeds_per_prompt: defaults::seeds(),
            seed_base: 0,
            model_tag: model_tag.into(),
            width: defaults::side(),
            height: defaults::side(),
            axes: defaults::axes(),
            baseline_report: None,
        }
    }

    /// Parse TOML (or JSON for `.json`), resolve relative paths against the
    /// file's directory, apply `FAIRGEN_*` environment overrides and validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let err = |message: String| ConfigError::Read { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut config: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| err(e.to_string()))?
        };
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.apply_env(|k| std::env::var(k).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.corpus_spec, &mut self.manifest_dir].into_iter().chain(self.baseline_report.as_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// `FAIRGEN_{GENERATION,PARAPHRASE,VQA}_{URL,TOKEN}` override the file.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let slots = [
            ("GENERATION", &mut self.endpoints.generation),
            ("PARAPHRASE", &mut self.endpoints.paraphrase),
            ("VQA", &mut self.endpoints.vqa),
        ];
        for (name, slot) in slots {
            if let Some(url) = lookup(&format!("FAIRGEN_{name}_URL")) {
                slot.get_or_insert_with(|| Endpoint::new("")).url = url;
            }
            if let Some(token) = lookup(&format!("FAIRGEN_{name}_TOKEN")) {
                slot.get_or_insert_with(|| Endpoint::new("")).auth_token = Some(token);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(ConfigError::Invalid(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.max_parallel == 0 {
            return Err(ConfigError::Invalid("max_parallel must be at least 1".into()));
        }
        if self.seeds_per_prompt == 0 {
            return Err(ConfigError::Invalid("seeds_per_prompt must be at least 1".into()));
        }
        if self.model_tag.trim().is_empty() {
            return Err(ConfigError::Invalid("model_tag is required".into()));
        }
        if self.axes.is_empty() {
            return Err(ConfigError::Invalid("at least one axis is required".into()));
        }
        let endpoints = [&self.endpoints.generation, &self.endpoints.paraphrase, &self.endpoints.vqa];
        if endpoints.iter().filter_map(|e| e.as_ref()).any(|e| e.url.trim().is_empty()) {
            return Err(ConfigError::Invalid("endpoint url is empty".into()));
        }
        Ok(())
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self, ConfigError> {
        self.tau = tau;
        self.validate()?;
        Ok(self)
    }
}
