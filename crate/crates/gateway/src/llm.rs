//! Language-model gateway: an OpenAI-compatible chat client with bounded
//! retries, and the [`LanguageModel`] trait the service talks to.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use promptcrafter_core::LlmRequest;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::{debug, warn};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider rate limited the request")]
    RateLimited,
    #[error("provider returned {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
}

impl LlmError {
    /// 429, 5xx, timeouts and connection failures are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Timeout | LlmError::RateLimited | LlmError::Transport(_) => true,
            LlmError::ProviderError { status, .. } => *status >= 500,
            LlmError::EmptyCompletion | LlmError::InvalidConfig(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionOutcome {
    /// Raw provider text, exactly as received.
    pub text: String,
    pub provider_request_id: String,
    pub latency: Duration,
    pub attempts: u32,
}

#[async_trait]
pub trait LanguageModel: Send + Sync {
    fn provider_id(&self) -> &str;
    fn model(&self) -> &str;
    async fn complete(&self, request: &LlmRequest) -> Result<CompletionOutcome, LlmError>;
}

#[derive(Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    #[serde(with = "millis", default = "default_timeout")]
    pub timeout: Duration,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(with = "millis", default = "default_backoff")]
    pub backoff_base: Duration,
}

impl std::fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &"<redacted>")
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .field("backoff_base", &self.backoff_base)
            .finish()
    }
}

fn default_timeout() -> Duration {
    Duration::from_secs(30)
}

fn default_retries() -> u32 {
    2
}

fn default_backoff() -> Duration {
    Duration::from_millis(500)
}

impl ProviderConfig {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            model: model.into(),
            timeout: default_timeout(),
            max_retries: default_retries(),
            backoff_base: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout.is_zero() {
            return Err(LlmError::InvalidConfig("timeout must be positive".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(LlmError::InvalidConfig("base_url is empty".into()));
        }
        Ok(())
    }
}

pub(crate) mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Delay before retry number `attempt` (0-based): `base * 2^attempt`.
pub fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    base.saturating_mul(1u32 << attempt.min(16))
}

/// Run `call` until it succeeds, fails with a non-retryable error, or
/// `1 + max_retries` attempts have been made.
pub(crate) async fn with_retries<T, E, F, Fut>(
    max_retries: u32,
    backoff_base: Duration,
    retryable: impl Fn(&E) -> bool,
    mut call: F,
) -> (Result<T, E>, u32)
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Result<T, E>>,
{
    let mut attempt = 0;
    loop {
        let result = call().await;
        attempt += 1;
        match result {
            Err(e) if retryable(&e) && attempt <= max_retries => {
                tokio::time::sleep(backoff_delay(backoff_base, attempt - 1)).await;
            }
            other => return (other, attempt),
        }
    }
}

/// Client for `POST {base_url}/chat/completions`.
pub struct OpenAiChat {
    config: ProviderConfig,
    http: reqwest::Client,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl OpenAiChat {
    pub fn new(config: ProviderConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// The JSON body sent for `request`.
    pub fn request_body(&self, request: &LlmRequest) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.instruction},
                {"role": "user", "content": request.context},
            ],
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_tokens,
        })
    }

    async fn attempt(&self, body: &serde_json::Value) -> Result<(String, String), LlmError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let response = self
            .http
            .post(&url)
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .await
            .map_err(classify_transport)?;
        let status = response.status();
        let header_id = response
            .headers()
            .get("x-request-id")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let text = response.text().await.map_err(classify_transport)?;
        if status.as_u16() == 429 {
            return Err(LlmError::RateLimited);
        }
        if !status.is_success() {
            return Err(LlmError::ProviderError {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::ProviderError {
                status: status.as_u16(),
                body: format!("unreadable body: {e}"),
            })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.is_empty())
            .ok_or(LlmError::EmptyCompletion)?;
        let id = parsed
            .id
            .or(header_id)
            .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        Ok((content, id))
    }
}

pub(crate) fn classify_transport(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout
    } else {
        LlmError::Transport(e.to_string())
    }
}

#[async_trait]
impl LanguageModel for OpenAiChat {
    fn provider_id(&self) -> &str {
        "openai-compatible"
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    async fn complete(&self, request: &LlmRequest) -> Result<CompletionOutcome, LlmError> {
        let body = self.request_body(request);
        let started = Instant::now();
        let (result, attempts) = with_retries(
            self.config.max_retries,
            self.config.backoff_base,
            LlmError::is_retryable,
            || self.attempt(&body),
        )
        .await;
        match result {
            Ok((text, provider_request_id)) => {
                debug!(attempts, kind = ?request.kind, "completion ok");
                Ok(CompletionOutcome {
                    text,
                    provider_request_id,
                    latency: started.elapsed(),
                    attempts,
                })
            }
            Err(e) => {
                warn!(attempts, error = %e, "completion failed");
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_classes() {
        assert!(LlmError::RateLimited.is_retryable());
        assert!(LlmError::Timeout.is_retryable());
        assert!(LlmError::ProviderError {
            status: 503,
            body: String::new()
        }
        .is_retryable());
        assert!(!LlmError::ProviderError {
            status: 401,
            body: String::new()
        }
        .is_retryable());
        assert!(!LlmError::ProviderError {
            status: 400,
            body: String::new()
        }
        .is_retryable());
        assert!(!LlmError::EmptyCompletion.is_retryable());
    }

    #[test]
    fn backoff_doubles() {
        let base = Duration::from_millis(500);
        assert_eq!(backoff_delay(base, 0), Duration::from_millis(500));
        assert_eq!(backoff_delay(base, 1), Duration::from_millis(1000));
        assert_eq!(backoff_delay(base, 2), Duration::from_millis(2000));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = ProviderConfig::new("http://x", "k", "m");
        assert_eq!(c.timeout, Duration::from_secs(30));
        assert_eq!(c.max_retries, 2);
        assert_eq!(c.backoff_base, Duration::from_millis(500));
        assert!(!format!("{c:?}").contains("\"k\""));
        let mut bad = c.clone();
        bad.timeout = Duration::ZERO;
        assert!(matches!(bad.validate(), Err(LlmError::InvalidConfig(_))));
    }

    #[tokio::test]
    async fn retry_budget_is_respected() {
        let mut calls = 0;
        let (result, attempts) = with_retries(2, Duration::ZERO, LlmError::is_retryable, || {
            calls += 1;
            async { Err::<(), _>(LlmError::RateLimited) }
        })
        .await;
        assert_eq!(result, Err(LlmError::RateLimited));
        assert_eq!((attempts, calls), (3, 3));

        let mut calls = 0;
        let (_, attempts) = with_retries(5, Duration::ZERO, LlmError::is_retryable, || {
            calls += 1;
            async {
                Err::<(), _>(LlmError::ProviderError {
                    status: 401,
                    body: String::new(),
                })
            }
        })
        .await;
        assert_eq!((attempts, calls), (1, 1));
    }
}
