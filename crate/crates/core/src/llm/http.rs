use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{estimate_tokens, ChatRequest, Completion, GatewayError, LlmClient};

pub const ENV_URL: &str = "LECKG_LLM_URL";
pub const ENV_KEY: &str = "LECKG_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model: "deepseek-chat".into(),
            api_key_env: ENV_KEY.into(),
            max_attempts: 3,
            backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

impl HttpConfig {
    /// Fill an empty base URL from `LECKG_LLM_URL`.
    pub fn with_env(mut self) -> Self {
        if self.base_url.is_empty() {
            if let Ok(url) = std::env::var(ENV_URL) {
                self.base_url = url;
            }
        }
        self
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Blocking client for an OpenAI-compatible chat-completion endpoint.
///
/// Connection failures, 408 and 5xx are retried with exponential backoff up
/// to `max_attempts`; 429 is retried the same way and surfaces as
/// `RateLimited`; 401/403 fail immediately.
pub struct HttpClient {
    config: HttpConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

enum Attempt {
    Done(Completion),
    Retry(String),
    Limited,
    Fatal(GatewayError),
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        if config.base_url.is_empty() {
            return Err(GatewayError::Config(format!(
                "no endpoint configured (set {ENV_URL} or base_url)"
            )));
        }
        let api_key = std::env::var(&config.api_key_env).ok();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            config,
            api_key,
            agent,
        })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    fn attempt(&self, req: &ChatRequest) -> Attempt {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut request = self.agent.post(&self.config.endpoint());
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match request.send_json(&body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fatal(GatewayError::Auth(format!("HTTP {status}"))),
            429 => return Attempt::Limited,
            408 | 500..=599 => return Attempt::Retry(format!("HTTP {status}")),
            _ => {
                return Attempt::Fatal(GatewayError::Transport {
                    attempts: 1,
                    message: format!("HTTP {status}"),
                })
            }
        }
        let value: Value = match resp.body_mut().read_json() {
            Ok(v) => v,
            Err(e) => return Attempt::Retry(format!("unreadable body: {e}")),
        };
        let Some(text) = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
        else {
            return Attempt::Fatal(GatewayError::Transport {
                attempts: 1,
                message: "response lacks choices[0].message.content".into(),
            });
        };
        let usage = |k: &str| value.pointer(&format!("/usage/{k}")).and_then(Value::as_u64);
        Attempt::Done(Completion {
            text: text.to_string(),
            prompt_tokens: usage("prompt_tokens")
                .unwrap_or_else(|| estimate_tokens(&req.system) + estimate_tokens(&req.user)),
            completion_tokens: usage("completion_tokens").unwrap_or_else(|| estimate_tokens(text)),
        })
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        let max = self.config.max_attempts.max(1);
        let mut last = String::new();
        let mut limited = false;
        for attempt in 1..=max {
            match self.attempt(req) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    limited = false;
                    last = msg;
                }
                Attempt::Limited => limited = true,
            }
            if attempt < max {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1));
                tracing::warn!(attempt, wait_ms = wait, "llm request failed, backing off");
                std::thread::sleep(Duration::from_millis(wait));
            }
        }
        if limited {
            Err(GatewayError::RateLimited { attempts: max })
        } else {
            Err(GatewayError::Transport {
                attempts: max,
                message: last,
            })
        }
    }
}
