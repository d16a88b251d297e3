//! Access to chat-completion and embedding endpoints.
//!
//! Every network call goes through [`RetryPolicy`] and, for chat, a
//! [`SlidingWindowLimiter`]. Responses are memoized in a JSON-lines
//! [`ResponseCache`] keyed by [`prompt_hash`].

mod cache;
mod chat;
mod embed;
mod limiter;
mod retry;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{prompt_hash, CacheEntry, ResponseCache};
pub use chat::{
    ChatExchange, ChatGateway, ChatRequest, ChatTransport, FnTransport, HttpChatTransport,
};
pub use embed::{EmbeddingVector, Embedder, HashingEmbedder, HttpEmbedder};
pub use limiter::SlidingWindowLimiter;
pub use retry::{AttemptError, RetryPolicy};

#[derive(Debug, Error)]
pub enum GatewayError {
    /// Retries exhausted on a transient failure.
    #[error("transport error (status {status:?}): {message}")]
    Transport { status: Option<u16>, message: String },
    /// Rejected by the endpoint; retrying will not help.
    #[error("request rejected with status {status}: {message}")]
    Request { status: u16, message: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl GatewayError {
    pub fn is_transport(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

fn default_temperature() -> f64 {
    0.0
}

fn default_max_output_tokens() -> u32 {
    64
}

fn default_requests_per_minute() -> u32 {
    60
}

/// Word cap for generated targets: 5 for GPT-3.5-class models, 4 otherwise.
pub fn default_max_target_words(model_id: &str) -> u32 {
    let id = model_id.to_ascii_lowercase();
    if id.contains("gpt-3.5") || id.contains("gpt-35") || id.contains("gpt3.5") {
        5
    } else {
        4
    }
}

/// One chat model endpoint. Holds the *name* of the environment variable
/// carrying the API key, never the key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpointConfig {
    pub model_id: String,
    pub base_url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_requests_per_minute")]
    pub requests_per_minute: u32,
    #[serde(default)]
    pub max_target_words: Option<u32>,
}

impl ModelEndpointConfig {
    pub fn new(model_id: impl Into<String>, base_url: impl Into<String>) -> Self {
        ModelEndpointConfig {
            model_id: model_id.into(),
            base_url: base_url.into(),
            api_key_env: None,
            temperature: default_temperature(),
            max_output_tokens: default_max_output_tokens(),
            requests_per_minute: default_requests_per_minute(),
            max_target_words: None,
        }
    }

    pub fn target_word_cap(&self) -> u32 {
        self.max_target_words
            .unwrap_or_else(|| default_max_target_words(&self.model_id))
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::Config("model_id is empty".into()));
        }
        reqwest::Url::parse(&self.base_url)
            .map_err(|e| GatewayError::Config(format!("base_url `{}`: {e}", self.base_url)))?;
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::Config("max_output_tokens must be positive".into()));
        }
        if self.requests_per_minute == 0 {
            return Err(GatewayError::Config("requests_per_minute must be positive".into()));
        }
        let cap = self.target_word_cap();
        if !(1..=10).contains(&cap) {
            return Err(GatewayError::Config(format!(
                "max_target_words must lie in [1, 10], got {cap}"
            )));
        }
        Ok(())
    }

    /// Reads the API key from the configured environment variable.
    pub fn api_key(&self) -> Result<Option<String>, GatewayError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                GatewayError::Config(format!("environment variable `{var}` is not set"))
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_cap_defaults() {
        assert_eq!(default_max_target_words("gpt-3.5-turbo-0125"), 5);
        assert_eq!(default_max_target_words("gpt-4o"), 4);
        assert_eq!(default_max_target_words("meta-llama/Meta-Llama-3-8B-Instruct"), 4);
        assert_eq!(default_max_target_words("mistral-7b-instruct"), 4);
    }

    #[test]
    fn validation_bounds_word_cap() {
        let mut cfg = ModelEndpointConfig::new("m", "http://localhost:8000/v1");
        assert!(cfg.validate().is_ok());
        cfg.max_target_words = Some(11);
        assert!(cfg.validate().is_err());
        cfg.max_target_words = Some(0);
        assert!(cfg.validate().is_err());
        cfg.max_target_words = Some(10);
        assert!(cfg.validate().is_ok());
        cfg.temperature = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn serialized_config_carries_no_key() {
        let mut cfg = ModelEndpointConfig::new("m", "http://localhost:8000/v1");
        cfg.api_key_env = Some("OTSD_TEST_SECRET_KEY".into());
        std::env::set_var("OTSD_TEST_SECRET_KEY", "sk-very-secret");
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(!json.contains("sk-very-secret"));
        assert!(format!("{cfg:?}").find("sk-very-secret").is_none());
        assert_eq!(cfg.api_key().unwrap().as_deref(), Some("sk-very-secret"));
    }

    #[test]
    fn missing_key_env_is_config_error() {
        let mut cfg = ModelEndpointConfig::new("m", "http://localhost:8000/v1");
        cfg.api_key_env = Some("OTSD_TEST_UNSET_VARIABLE_XYZ".into());
        assert!(matches!(cfg.api_key(), Err(GatewayError::Config(_))));
    }
}
