//! Chat-completion access: an OpenAI-compatible HTTP client for live runs
//! and a scripted backend for tests and golden pipelines.

use std::time::Duration;

use serde::{Deserialize, Serialize};

mod audit;
mod http;
mod ratelimit;
mod scripted;
#[doc(hidden)]
pub mod testing;

pub use audit::AuditedBackend;
pub use http::HttpBackend;
pub use ratelimit::RateLimiter;
pub use scripted::{normalize_prompt, prompt_hash, script_backend, KeyMode, Script, ScriptedBackend};

/// Connection and decoding settings. Holds the *name* of the variable that
/// carries the API key, never the key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub request_timeout_secs: f64,
    pub parallelism: usize,
    pub api_key_env: String,
    /// First backoff delay; doubles on every retry.
    pub retry_base_ms: u64,
    pub requests_per_second: Option<f64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.7,
            max_retries: 3,
            request_timeout_secs: 60.0,
            parallelism: 1,
            api_key_env: "LLM_API_KEY".into(),
            retry_base_ms: 1000,
            requests_per_second: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.parallelism == 0 {
            return Err("parallelism must be positive".into());
        }
        if !(self.request_timeout_secs > 0.0) {
            return Err("request_timeout_secs must be positive".into());
        }
        if let Some(rps) = self.requests_per_second {
            if !(rps > 0.0) {
                return Err("requests_per_second must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRecord {
    pub prompt: String,
    pub response: String,
    pub latency: Duration,
    /// 1 on first-try success; never more than `max_retries + 1`.
    pub attempt_count: u32,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("EMPTY_PROMPT: prompt must be non-empty")]
    EmptyPrompt,
    #[error("BACKEND_EXHAUSTED after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("BACKEND_REJECTED: HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("BAD_RESPONSE: {0}")]
    BadResponse(String),
    #[error("SCRIPT_MISS: no scripted response for key {0}")]
    ScriptMiss(String),
    #[error("SCRIPT_EXHAUSTED: scripted responses used up")]
    ScriptExhausted,
    #[error("EMPTY_SCRIPT: a scripted backend needs at least one response")]
    EmptyScript,
}

impl BackendError {
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::EmptyPrompt => "EMPTY_PROMPT",
            BackendError::Exhausted { .. } => "BACKEND_EXHAUSTED",
            BackendError::Rejected { .. } => "BACKEND_REJECTED",
            BackendError::BadResponse(_) => "BAD_RESPONSE",
            BackendError::ScriptMiss(_) => "SCRIPT_MISS",
            BackendError::ScriptExhausted => "SCRIPT_EXHAUSTED",
            BackendError::EmptyScript => "EMPTY_SCRIPT",
        }
    }
}

/// A single-turn completion source. Handles are shared across workers.
pub trait ChatBackend: Send + Sync {
    fn backend_id(&self) -> String;

    fn complete(&self, prompt: &str) -> Result<CompletionRecord, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }

    fn complete(&self, prompt: &str) -> Result<CompletionRecord, BackendError> {
        (**self).complete(prompt)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }

    fn complete(&self, prompt: &str) -> Result<CompletionRecord, BackendError> {
        (**self).complete(prompt)
    }
}

/// One-shot completion against the configured HTTP endpoint.
pub fn complete(config: &BackendConfig, prompt: &str) -> Result<CompletionRecord, BackendError> {
    HttpBackend::new(config.clone())?.complete(prompt)
}
