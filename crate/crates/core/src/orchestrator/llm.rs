//! OpenAI-compatible chat-completions subset.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const API_KEY_ENV: &str = "UQGATE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_tokens: usize,
    pub logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    #[serde(default)]
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChoiceLogprobs {
    #[serde(default)]
    pub content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResponseMessage {
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    #[serde(default)]
    pub index: usize,
    #[serde(default)]
    pub message: ResponseMessage,
    #[serde(default)]
    pub logprobs: Option<ChoiceLogprobs>,
    #[serde(default)]
    pub finish_reason: Option<String>,
}

impl Choice {
    pub fn token_logprobs(&self) -> Option<Vec<f64>> {
        self.logprobs
            .as_ref()?
            .content
            .as_ref()
            .map(|toks| toks.iter().map(|t| t.logprob).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    /// Connection failures and 5xx responses; retried.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    /// Non-retryable 4xx.
    #[error("endpoint rejected the request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("gave up after {attempts} attempts: {last}")]
    PersistentFailure { attempts: usize, last: String },
}

impl LlmError {
    fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_) | LlmError::RateLimited { .. } | LlmError::Malformed(_))
    }
}

/// Anything that can answer a chat-completion request.
pub trait LlmClient: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: usize, err: &LlmError) -> Duration {
        if let LlmError::RateLimited { retry_after: Some(d) } = err {
            return (*d).min(self.max_delay);
        }
        let factor = 1u32 << attempt.min(16) as u32;
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Run `call` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, LlmError>) -> Result<T, LlmError> {
        let attempts = self.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => {
                    if attempt + 1 < attempts {
                        thread::sleep(self.delay(attempt, &e));
                    }
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(LlmError::PersistentFailure {
            attempts,
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct HttpLlmConfig {
    /// Base URL; `/v1/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpLlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpLlmClient {
    cfg: HttpLlmConfig,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(cfg: HttpLlmConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
        Self { cfg, agent }
    }

    fn url(&self) -> String {
        if self.cfg.endpoint.ends_with("/chat/completions") {
            self.cfg.endpoint.clone()
        } else {
            format!("{}/v1/chat/completions", self.cfg.endpoint)
        }
    }

    fn attempt(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut call = self.agent.post(&self.url()).set("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_value(req).map_err(|e| LlmError::Malformed(e.to_string()))?;
        match call.send_json(body) {
            Ok(resp) => resp
                .into_json::<ChatResponse>()
                .map_err(|e| LlmError::Malformed(e.to_string())),
            Err(ureq::Error::Status(429, resp)) => {
                let retry_after = resp
                    .header("Retry-After")
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .map(Duration::from_secs_f64);
                Err(LlmError::RateLimited { retry_after })
            }
            Err(ureq::Error::Status(status, resp)) if status >= 500 => Err(LlmError::Transport(format!(
                "HTTP {status}: {}",
                resp.into_string().unwrap_or_default()
            ))),
            Err(ureq::Error::Status(status, resp)) => Err(LlmError::Rejected {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(e) => Err(LlmError::Transport(e.to_string())),
        }
    }
}

impl LlmClient for HttpLlmClient {
    fn model_id(&self) -> &str {
        &self.cfg.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.cfg.retry.run(|| self.attempt(req))
    }
}
