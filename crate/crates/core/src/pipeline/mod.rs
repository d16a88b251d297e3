//! Orchestration of the two generation approaches over a dataset.
//!
//! TG+SD asks for a target, then for the stance toward that target. TG&SD
//! asks for both in one prompt. Each (sample, repetition) unit is cached by
//! prompt hash, so an interrupted run resumes without repeating calls.

mod aggregate;
mod results;
mod run;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Dataset, StanceLabel};
use crate::gateway::{GatewayError, ModelEndpointConfig};
use crate::prompting::{PromptError, PromptTemplates};

pub use aggregate::{aggregate_repetitions, AggregateError, AggregatedMetric, MetricKey};
pub use results::{read_results, write_results, ResultsCsvError};
pub use run::{run_approach, run_tg_and_sd, run_tg_plus_sd, trace, RunContext};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dataset `{0}` is empty")]
    EmptyDataset(String),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    #[serde(rename = "TG+SD")]
    TgPlusSd,
    #[serde(rename = "TG&SD")]
    TgAndSd,
}

impl Approach {
    pub const ALL: [Approach; 2] = [Approach::TgPlusSd, Approach::TgAndSd];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::TgPlusSd => "TG+SD",
            Approach::TgAndSd => "TG&SD",
        }
    }

    /// Chat calls per sample and repetition.
    pub fn calls_per_unit(self) -> usize {
        match self {
            Approach::TgPlusSd => 2,
            Approach::TgAndSd => 1,
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tg+sd" | "tg_plus_sd" | "two-step" => Ok(Approach::TgPlusSd),
            "tg&sd" | "tg_and_sd" | "joint" => Ok(Approach::TgAndSd),
            other => Err(format!("unknown approach `{other}` (expected TG+SD or TG&SD)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultFlag {
    /// The target exceeded the word cap and was cut.
    Truncated,
    /// The stance could not be read and was set to NONE.
    StanceFallback,
}

impl ResultFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            ResultFlag::Truncated => "truncated",
            ResultFlag::StanceFallback => "stance_fallback",
        }
    }
}

impl FromStr for ResultFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "truncated" => Ok(ResultFlag::Truncated),
            "stance_fallback" => Ok(ResultFlag::StanceFallback),
            other => Err(format!("unknown flag `{other}`")),
        }
    }
}

/// One model output for one sample and repetition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedResult {
    pub sample_id: String,
    pub model_id: String,
    pub approach: Approach,
    pub repetition: u32,
    pub generated_target: String,
    pub predicted_stance: StanceLabel,
    pub flags: BTreeSet<ResultFlag>,
}

/// A (sample, repetition) unit that produced no result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncompleteSample {
    pub sample_id: String,
    pub repetition: u32,
    pub step: String,
    pub error: String,
}

/// Numeric ids compare as numbers and sort before non-numeric ids.
pub fn compare_sample_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Source of cache and manifest timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

/// Always returns the same instant.
#[derive(Debug, Clone)]
pub struct FixedClock(pub String);

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

fn default_repetitions() -> u32 {
    3
}

fn default_concurrency() -> usize {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSettings {
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    /// Maximum in-flight units.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub seed: u64,
    /// Map unreadable stances to NONE instead of leaving the unit incomplete.
    #[serde(default = "default_true")]
    pub stance_fallback: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            repetitions: default_repetitions(),
            concurrency: default_concurrency(),
            seed: 0,
            stance_fallback: true,
        }
    }
}

/// Identity of a run. The hash covers every field except `created_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub models: Vec<ModelEndpointConfig>,
    pub approach: Approach,
    pub repetitions: u32,
    pub seed: u64,
    pub stance_fallback: bool,
    pub prompt_assets: Vec<(String, String)>,
    pub created_at: String,
}

impl RunManifest {
    pub fn new(
        dataset: &Dataset,
        model: &ModelEndpointConfig,
        approach: Approach,
        settings: &RunSettings,
        templates: &PromptTemplates,
        created_at: String,
    ) -> Self {
        RunManifest {
            dataset: dataset.name.name().to_string(),
            models: vec![model.clone()],
            approach,
            repetitions: settings.repetitions,
            seed: settings.seed,
            stance_fallback: settings.stance_fallback,
            prompt_assets: templates.asset_hashes(),
            created_at,
        }
    }

    pub fn hash(&self) -> String {
        let mut identity = serde_json::to_value(self).expect("manifest serializes");
        if let Some(map) = identity.as_object_mut() {
            map.remove("created_at");
        }
        let canonical = serde_json::to_string(&identity).expect("manifest serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// First 16 hex digits of the hash, used for run directory names.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Sorted by sample id, then repetition.
    pub results: Vec<GeneratedResult>,
    pub incomplete: Vec<IncompleteSample>,
    /// Calls that reached the chat endpoint.
    pub chat_calls: usize,
    /// Prompts answered from the cache or by a concurrent identical call.
    pub cache_hits: usize,
}

impl RunOutcome {
    pub fn flag_count(&self, flag: ResultFlag) -> usize {
        self.results.iter().filter(|r| r.flags.contains(&flag)).count()
    }
}
