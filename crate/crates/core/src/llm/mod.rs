//! The single boundary to the language model.
//!
//! [`Gateway`] wraps any [`LlmClient`] with an in-flight limit and call
//! accounting. Two clients ship: [`HttpClient`] for chat-completion style
//! endpoints and [`MockClient`], a deterministic scripted double.

mod http;
mod mock;
pub(crate) mod parse;
mod prompt;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpClient, HttpConfig};
pub use mock::{MockClient, MockRule, Scenario};
pub use parse::{parse_tuples, ParseDiagnostic, RawTuple};
pub use prompt::{
    build_extraction_prompt, build_flat_prompt, build_remap_prompt, default_demos, Demo, MappingGuideline,
    PromptConfigError, PromptOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallTag {
    Extract,
    Remap,
    Feedback,
}

impl CallTag {
    fn slot(self) -> usize {
        match self {
            CallTag::Extract => 0,
            CallTag::Remap => 1,
            CallTag::Feedback => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: CallTag,
    /// Accounting label (e.g. the triple a feedback call is about). Not part of the prompt hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl ChatRequest {
    pub fn new(tag: CallTag, system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
            max_tokens: 4096,
            tag,
            subject: None,
        }
    }

    pub fn with_subject(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }

    /// Stable 16-hex-digit hash of the rendered prompt (system and user text).
    pub fn prompt_hash(&self) -> String {
        prompt_hash(&self.system, &self.user)
    }
}

pub fn prompt_hash(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(system.as_bytes());
    h.update([0u8]);
    h.update(user.as_bytes());
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub(crate) fn estimate_tokens(text: &str) -> u64 {
    text.chars().count().div_ceil(4) as u64
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("no scripted reply for prompt {hash} ({tag:?})")]
    NoScriptedReply { hash: String, tag: CallTag },
    #[error("gateway misconfigured: {0}")]
    Config(String),
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tag: CallTag,
    pub prompt_hash: String,
    pub subject: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub ok: bool,
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Shareable front door to a client: bounds concurrency and records every call.
pub struct Gateway {
    client: Box<dyn LlmClient>,
    permits: Permits,
    max_in_flight: usize,
    calls: [AtomicU64; 3],
    log: Mutex<Vec<CallRecord>>,
}

impl Gateway {
    pub fn new(client: impl LlmClient + 'static) -> Self {
        Self::with_limit(client, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_limit(client: impl LlmClient + 'static, max_in_flight: usize) -> Self {
        let max_in_flight = max_in_flight.max(1);
        Self {
            client: Box::new(client),
            permits: Permits {
                free: Mutex::new(max_in_flight),
                cv: Condvar::new(),
            },
            max_in_flight,
            calls: Default::default(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        self.permits.acquire();
        let result = self.client.complete(req);
        self.permits.release();

        self.calls[req.tag.slot()].fetch_add(1, Ordering::SeqCst);
        let hash = req.prompt_hash();
        let record = match &result {
            Ok(c) => CallRecord {
                tag: req.tag,
                prompt_hash: hash,
                subject: req.subject.clone(),
                prompt_tokens: c.prompt_tokens,
                completion_tokens: c.completion_tokens,
                ok: true,
            },
            Err(_) => CallRecord {
                tag: req.tag,
                prompt_hash: hash,
                subject: req.subject.clone(),
                prompt_tokens: estimate_tokens(&req.system) + estimate_tokens(&req.user),
                completion_tokens: 0,
                ok: false,
            },
        };
        tracing::debug!(
            tag = ?record.tag,
            hash = %record.prompt_hash,
            prompt_tokens = record.prompt_tokens,
            completion_tokens = record.completion_tokens,
            ok = record.ok,
            "llm call"
        );
        self.log.lock().unwrap().push(record);
        result.map(|c| c.text)
    }

    pub fn call_count(&self, tag: CallTag) -> u64 {
        self.calls[tag.slot()].load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> u64 {
        self.calls.iter().map(|c| c.load(Ordering::SeqCst)).sum()
    }

    /// Calls of `tag` whose subject equals `subject`.
    pub fn calls_for(&self, tag: CallTag, subject: &str) -> usize {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.tag == tag && r.subject.as_deref() == Some(subject))
            .count()
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap().clone()
    }
}
