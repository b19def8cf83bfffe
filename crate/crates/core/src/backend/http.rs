use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};

use super::{BackendConfig, BackendError, ChatBackend, CompletionRecord, RateLimiter};

/// OpenAI-compatible chat-completions client: one user message per request.
#[derive(Debug)]
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

enum Failure {
    Retryable { message: String, retry_after: Option<Duration> },
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate().map_err(BackendError::BadResponse)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_secs))
            .build()
            .map_err(|e| BackendError::BadResponse(format!("cannot build HTTP client: {e}")))?;
        let limiter = config.requests_per_second.map(RateLimiter::new);
        Ok(HttpBackend {
            config,
            client,
            limiter,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let base = self.config.retry_base_ms as f64 * 2f64.powi(attempt as i32 - 1);
        let jitter = rand::rng().random_range(0.0..0.25);
        let delay = Duration::from_secs_f64(base * (1.0 + jitter) / 1000.0);
        retry_after.map_or(delay, |r| r.max(delay))
    }

    fn send(&self, prompt: &str) -> Result<String, Failure> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let mut request = self.client.post(&self.config.endpoint_url).json(&body);
        // the key is read here and nowhere else
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| Failure::Retryable {
            message: format!("transport: {e}"),
            retry_after: None,
        })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            let retry_after = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(Duration::from_secs_f64);
            return Err(Failure::Retryable {
                message: format!("HTTP {}", status.as_u16()),
                retry_after,
            });
        }
        let text = response.text().map_err(|e| Failure::Retryable {
            message: format!("reading body: {e}"),
            retry_after: None,
        })?;
        if !status.is_success() {
            return Err(Failure::Fatal(BackendError::Rejected {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            }));
        }
        let payload: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(BackendError::BadResponse(format!("not JSON: {e}"))))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                Failure::Fatal(BackendError::BadResponse(
                    "missing choices[0].message.content text".into(),
                ))
            })
    }
}

impl ChatBackend for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}@{}", self.config.model_name, self.config.endpoint_url)
    }

    fn complete(&self, prompt: &str) -> Result<CompletionRecord, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let start = Instant::now();
        let max_attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.send(prompt) {
                Ok(response) => {
                    return Ok(CompletionRecord {
                        prompt: prompt.to_string(),
                        response,
                        latency: start.elapsed(),
                        attempt_count: attempt,
                        backend_id: self.backend_id(),
                    })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable { message, retry_after }) => {
                    log::warn!("attempt {attempt}/{max_attempts} failed: {message}");
                    last = message;
                    if attempt < max_attempts {
                        std::thread::sleep(self.backoff(attempt, retry_after));
                    }
                }
            }
        }
        Err(BackendError::Exhausted {
            attempts: max_attempts,
            last,
        })
    }
}
