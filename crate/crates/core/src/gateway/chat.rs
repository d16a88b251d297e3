use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AttemptError, GatewayError, ModelEndpointConfig, RetryPolicy, SlidingWindowLimiter};

/// Everything a transport needs for one chat-completion attempt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub system_prompt: String,
    pub user_content: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// A completed chat call. `response_text` is the endpoint output verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_prompt: String,
    pub user_content: String,
    pub response_text: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub attempt_count: u32,
}

/// One attempt against a chat backend.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, AttemptError>;
}

/// Transport backed by a closure; used for offline runs and tests.
pub struct FnTransport<F>(pub F);

impl<F> ChatTransport for FnTransport<F>
where
    F: Fn(&ChatRequest) -> Result<String, AttemptError> + Send + Sync,
{
    fn send(&self, request: &ChatRequest) -> Result<String, AttemptError> {
        (self.0)(request)
    }
}

/// Chat-completions over HTTP: POST `{base_url}/chat/completions` with a
/// `messages` array; the first choice's content is returned.
pub struct HttpChatTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpChatTransport {
    pub fn new(config: &ModelEndpointConfig, timeout: Duration) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpChatTransport {
            client,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key: config.api_key()?,
        })
    }
}

pub(crate) fn send_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
) -> Result<serde_json::Value, AttemptError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| AttemptError::transient(None, e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.text().map_err(|e| AttemptError::transient(Some(status), e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(AttemptError::from_status(status, text));
    }
    serde_json::from_str(&text)
        .map_err(|e| AttemptError::fatal(None, format!("invalid JSON body: {e}")))
}

impl ChatTransport for HttpChatTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, AttemptError> {
        let body = json!({
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_content},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let value = send_json(&self.client, &self.url, self.api_key.as_deref(), &body)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| AttemptError::fatal(None, "response has no choices[0].message.content"))
    }
}

/// Rate-limited, retrying access to one chat model.
pub struct ChatGateway {
    config: ModelEndpointConfig,
    transport: Box<dyn ChatTransport>,
    retry: RetryPolicy,
    limiter: SlidingWindowLimiter,
    calls: AtomicUsize,
    attempts: AtomicUsize,
}

impl ChatGateway {
    pub fn new(
        config: ModelEndpointConfig,
        transport: Box<dyn ChatTransport>,
        retry: RetryPolicy,
    ) -> Result<Self, GatewayError> {
        config.validate()?;
        let limiter = SlidingWindowLimiter::per_minute(config.requests_per_minute);
        Ok(ChatGateway {
            config,
            transport,
            retry,
            limiter,
            calls: AtomicUsize::new(0),
            attempts: AtomicUsize::new(0),
        })
    }

    /// Gateway over the HTTP transport for `config`.
    pub fn http(
        config: ModelEndpointConfig,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let transport = HttpChatTransport::new(&config, timeout)?;
        Self::new(config, Box::new(transport), retry)
    }

    pub fn with_limiter(mut self, limiter: SlidingWindowLimiter) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn config(&self) -> &ModelEndpointConfig {
        &self.config
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    /// Number of `complete` calls that reached the transport.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Total attempts across all calls, retries included.
    pub fn attempt_count(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    pub fn complete(
        &self,
        system_prompt: &str,
        user_content: &str,
    ) -> Result<ChatExchange, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let request = ChatRequest {
            model: self.config.model_id.clone(),
            system_prompt: system_prompt.to_string(),
            user_content: user_content.to_string(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_output_tokens,
        };
        let started = Instant::now();
        let (response_text, attempt_count) = self.retry.run(|_| {
            self.limiter.acquire();
            self.attempts.fetch_add(1, Ordering::SeqCst);
            self.transport.send(&request)
        })?;
        Ok(ChatExchange {
            system_prompt: request.system_prompt,
            user_content: request.user_content,
            response_text,
            latency: started.elapsed(),
            attempt_count,
        })
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn gateway<F>(f: F) -> ChatGateway
    where
        F: Fn(&ChatRequest) -> Result<String, AttemptError> + Send + Sync + 'static,
    {
        ChatGateway::new(
            ModelEndpointConfig::new("mock-model", "http://localhost:1/v1"),
            Box::new(FnTransport(f)),
            RetryPolicy::immediate(4),
        )
        .unwrap()
    }

    #[test]
    fn echo_mock_returns_text_verbatim() {
        let gw = gateway(|_| Ok("FAVOR".to_string()));
        let ex = gw.complete("sys", "user").unwrap();
        assert_eq!(ex.response_text, "FAVOR");
        assert_eq!(ex.attempt_count, 1);
        assert_eq!(ex.system_prompt, "sys");
        assert_eq!(ex.user_content, "user");
    }

    #[test]
    fn two_rate_limits_then_success_takes_three_attempts() {
        let n = Mutex::new(0);
        let gw = gateway(move |_| {
            let mut n = n.lock().unwrap();
            *n += 1;
            if *n <= 2 {
                Err(AttemptError::from_status(429, "rate limited"))
            } else {
                Ok("NONE".into())
            }
        });
        let ex = gw.complete("s", "u").unwrap();
        assert_eq!(ex.attempt_count, 3);
        assert_eq!(gw.call_count(), 1);
        assert_eq!(gw.attempt_count(), 3);
    }

    #[test]
    fn unauthorized_is_not_retried() {
        let gw = gateway(|_| Err(AttemptError::from_status(401, "invalid key")));
        let err = gw.complete("s", "u").unwrap_err();
        assert!(matches!(err, GatewayError::Request { status: 401, .. }));
        assert_eq!(gw.attempt_count(), 1);
    }

    #[test]
    fn request_carries_config_parameters() {
        let gw = gateway(|req| {
            Ok(format!("{}|{}|{}|{}", req.model, req.temperature, req.max_tokens, req.user_content))
        });
        assert_eq!(gw.complete("s", "hi").unwrap().response_text, "mock-model|0|64|hi");
    }
}
