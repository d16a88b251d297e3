//! Harness configuration, stored as TOML.
//!
//! ```toml
//! version = 1
//! output_dir = "runs"
//!
//! [run]
//! repetitions = 3
//! concurrency = 4
//! seed = 0
//! stance_fallback = true
//!
//! [[models]]
//! model_id = "gpt-4o"
//! base_url = "https://api.openai.com/v1"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [embedding]
//! kind = "http"
//! base_url = "http://localhost:8080/v1"
//! model = "all-mpnet-base-v2"
//!
//! [classifier]
//! url = "http://localhost:9000/classify"
//!
//! [datasets.tse]
//! path = "data/tse.csv"
//!
//! [humaneval]
//! annotators = ["a1", "a2", "a3"]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ColumnMapping, MatchPolicy};
use crate::gateway::{GatewayError, ModelEndpointConfig};
use crate::pipeline::RunSettings;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config version {found} is not supported (expected {CONFIG_VERSION})")]
    Version { found: u32 },
    #[error("config: {0}")]
    Invalid(String),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    /// Deterministic bag-of-words hashing; for tests and dry runs.
    Hashing {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

fn default_dimension() -> usize {
    256
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hashing { dimension: default_dimension() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub columns: ColumnMapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanEvalConfig {
    /// Registered annotator ids; empty accepts anyone.
    pub annotators: Vec<String>,
    pub sample_explicit: usize,
    pub sample_non_explicit: usize,
    /// Which repetition's targets are shown to annotators.
    pub repetition: u32,
    pub static_dir: Option<PathBuf>,
}

impl Default for HumanEvalConfig {
    fn default() -> Self {
        HumanEvalConfig {
            annotators: Vec::new(),
            sample_explicit: 250,
            sample_non_explicit: 250,
            repetition: 1,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub version: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub explicitness: MatchPolicy,
    /// Directory with replacement prompt files.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default)]
    pub models: Vec<ModelEndpointConfig>,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub classifier: Option<ClassifierConfig>,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetConfig>,
    #[serde(default)]
    pub humaneval: HumanEvalConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_request_timeout() -> u64 {
    120
}

fn default_attempts() -> u32 {
    5
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            version: CONFIG_VERSION,
            output_dir: default_output_dir(),
            run: RunSettings::default(),
            explicitness: MatchPolicy::default(),
            prompts_dir: None,
            request_timeout_secs: default_request_timeout(),
            max_attempts: default_attempts(),
            models: Vec::new(),
            embedding: EmbeddingConfig::default(),
            classifier: None,
            datasets: BTreeMap::new(),
            humaneval: HumanEvalConfig::default(),
        }
    }
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: HarnessConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.prompts_dir {
            fix(p);
        }
        if let Some(p) = &mut self.humaneval.static_dir {
            fix(p);
        }
        for d in self.datasets.values_mut() {
            fix(&mut d.path);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version { found: self.version });
        }
        if self.run.repetitions == 0 {
            return Err(ConfigError::Invalid("run.repetitions must be positive".into()));
        }
        if self.run.concurrency == 0 {
            return Err(ConfigError::Invalid("run.concurrency must be positive".into()));
        }
        if self.max_attempts == 0 {
            return Err(ConfigError::Invalid("max_attempts must be positive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.models {
            m.validate()?;
            if !seen.insert(&m.model_id) {
                return Err(ConfigError::Invalid(format!("model `{}` listed twice", m.model_id)));
            }
        }
        Ok(())
    }

    pub fn model(&self, model_id: &str) -> Option<&ModelEndpointConfig> {
        self.models.iter().find(|m| m.model_id == model_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_example_parses() {
        let doc: String = include_str!("config.rs")
            .lines()
            .take_while(|l| l.starts_with("//!"))
            .filter_map(|l| l.strip_prefix("//! "))
            .skip_while(|l| !l.starts_with("```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("```"))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = HarnessConfig::from_toml(&doc).unwrap();
        assert_eq!(cfg.models[0].target_word_cap(), 4);
        assert_eq!(cfg.run.repetitions, 3);
        assert!(matches!(cfg.embedding, EmbeddingConfig::Http { .. }));
        assert_eq!(cfg.humaneval.annotators.len(), 3);
        assert_eq!(cfg.datasets["tse"].columns, ColumnMapping::default());
    }

    #[test]
    fn minimal_and_version_checks() {
        let cfg = HarnessConfig::from_toml("version = 1").unwrap();
        assert_eq!(cfg, HarnessConfig::default());
        assert!(matches!(HarnessConfig::from_toml("version = 2"), Err(ConfigError::Version { found: 2 })));
        assert!(HarnessConfig::from_toml("").is_err());
    }

    #[test]
    fn duplicate_models_rejected() {
        let text = r#"
version = 1
[[models]]
model_id = "m"
base_url = "http://x"
[[models]]
model_id = "m"
base_url = "http://y"
"#;
        assert!(HarnessConfig::from_toml(text).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("otsd.toml");
        std::fs::write(&path, "version = 1\n[datasets.tse]\npath = \"tse.csv\"\n").unwrap();
        let cfg = HarnessConfig::load(&path).unwrap();
        assert_eq!(cfg.datasets["tse"].path, dir.path().join("tse.csv"));
        assert_eq!(cfg.output_dir, dir.path().join("runs"));
    }
}
