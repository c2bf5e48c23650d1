//! Chat-model abstraction shared by every pipeline stage.
//!
//! A [`Provider`] binds a model id to a [`ChatBackend`] (scripted or HTTP),
//! an optional [`ResponseCache`], and an [`Executor`] used by
//! [`Provider::complete_batch`]. Every call is counted both on the provider
//! and on the caller-supplied [`CallTally`], so per-question accounting can
//! be reconciled against provider totals.

mod cache;
mod http;
mod retry;
mod scripted;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::exec::Executor;

pub use cache::{CacheEntry, CacheStats, ResponseCache};
pub(crate) use http::{build_agent, is_transient, read_api_key};
pub use http::{HttpBackend, HttpBackendConfig};
pub use retry::{with_retries, Attempt, RetryPolicy};
pub use scripted::{Script, ScriptEntry, ScriptRule, ScriptedBackend};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no scripted response for model `{model}` (prompt starts: {prompt_preview:?})")]
    ScriptMiss {
        model: String,
        prompt_preview: String,
    },
    #[error("environment variable {env_var} is not set")]
    MissingCredential { env_var: String },
    #[error("response cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// One chat-completion call.
///
/// `sample_index` distinguishes repeated draws of the same prompt at nonzero
/// temperature; it is part of the cache key but never sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sample_index: u32,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<Message>, temperature: f64) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature,
            seed: None,
            sample_index: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_sample_index(mut self, sample_index: u32) -> Self {
        self.sample_index = sample_index;
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| ProviderError::InvalidRequest("messages must not be empty".into()))?;
        if first.role == Role::Assistant {
            return Err(ProviderError::InvalidRequest(
                "first message must be a system or user message".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// NFC-normalized, length-delimited rendering of the message list.
    pub fn canonical_messages(&self) -> String {
        canonical_messages(&self.messages)
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey::of(self)
    }

    /// Concatenated message contents, used for regex script rules and
    /// diagnostics.
    pub fn flat_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub(crate) fn canonical_messages(messages: &[Message]) -> String {
    let mut out = String::new();
    for m in messages {
        let content: String = m.content.nfc().collect();
        out.push_str(m.role.as_str());
        out.push('\u{1f}');
        out.push_str(&content.len().to_string());
        out.push(':');
        out.push_str(&content);
        out.push('\u{1e}');
    }
    out
}

/// Hex SHA-256 digest identifying a request for caching.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn of(request: &ChatRequest) -> Self {
        let mut h = Sha256::new();
        let model: String = request.model_id.nfc().collect();
        h.update(b"gaterag-cache-v1\n");
        h.update(format!("model\u{1f}{}:{}\u{1e}", model.len(), model).as_bytes());
        h.update(request.canonical_messages().as_bytes());
        // -0.0 and 0.0 sample identically.
        let temperature = if request.temperature == 0.0 {
            0.0f64
        } else {
            request.temperature
        };
        h.update(format!("\u{1d}temperature={:016x}", temperature.to_bits()).as_bytes());
        match request.seed {
            Some(seed) => h.update(format!("\u{1d}seed={seed}").as_bytes()),
            None => h.update(b"\x1dseed=none"),
        }
        h.update(format!("\u{1d}sample={}", request.sample_index).as_bytes());
        CacheKey(hex::encode(h.finalize()))
    }

    pub fn from_hex(s: impl Into<String>) -> Self {
        CacheKey(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Complete,
    Truncated,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Live,
    Cache,
    Script,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    pub provenance: Provenance,
}

/// A concrete model endpoint.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    /// Number of transport attempts (network requests or script lookups)
    /// this backend has made.
    fn attempts(&self) -> u64;

    fn describe(&self) -> String;
}

/// Per-scope call counters. Pipeline stages share one tally per question.
#[derive(Debug, Default)]
pub struct CallTally {
    requests: AtomicU64,
    cache_hits: AtomicU64,
}

impl CallTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn backend_calls(&self) -> u64 {
        self.requests() - self.cache_hits()
    }
}

/// Snapshot of a provider's lifetime counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProviderCounters {
    pub requests: u64,
    pub cache_hits: u64,
    pub backend_calls: u64,
    pub failures: u64,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    cache_hits: AtomicU64,
    backend_calls: AtomicU64,
    failures: AtomicU64,
}

/// A model id bound to a backend, optional cache, and batch executor.
#[derive(Clone)]
pub struct Provider {
    model_id: String,
    backend: Arc<dyn ChatBackend>,
    cache: Option<Arc<ResponseCache>>,
    exec: Executor,
    counters: Arc<Counters>,
}

impl fmt::Debug for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Provider")
            .field("model_id", &self.model_id)
            .field("backend", &self.backend.describe())
            .field("cached", &self.cache.is_some())
            .finish()
    }
}

impl Provider {
    pub fn new(model_id: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            model_id: model_id.into(),
            backend,
            cache: None,
            exec: Executor::sequential(),
            counters: Arc::new(Counters::default()),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_executor(mut self, exec: Executor) -> Self {
        self.exec = exec;
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    pub fn executor(&self) -> &Executor {
        &self.exec
    }

    /// Request for this provider's model.
    pub fn request(&self, messages: Vec<Message>, temperature: f64) -> ChatRequest {
        ChatRequest::new(self.model_id.clone(), messages, temperature)
    }

    pub fn counters(&self) -> ProviderCounters {
        ProviderCounters {
            requests: self.counters.requests.load(Ordering::Relaxed),
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
            backend_calls: self.counters.backend_calls.load(Ordering::Relaxed),
            failures: self.counters.failures.load(Ordering::Relaxed),
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.complete_tallied(request, &CallTally::new())
    }

    pub fn complete_tallied(
        &self,
        request: &ChatRequest,
        tally: &CallTally,
    ) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        tally.requests.fetch_add(1, Ordering::Relaxed);

        let key = request.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&key)? {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                tally.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(ChatResponse {
                    text: entry.text,
                    finish_reason: entry.finish_reason,
                    usage: None,
                    provenance: Provenance::Cache,
                });
            }
        }

        self.counters.backend_calls.fetch_add(1, Ordering::Relaxed);
        let response = match self.backend.complete(request) {
            Ok(r) => r,
            Err(err) => {
                self.counters.failures.fetch_add(1, Ordering::Relaxed);
                return Err(err);
            }
        };
        if let Some(cache) = &self.cache {
            if response.finish_reason != FinishReason::Error {
                cache.put(&key, &response)?;
            }
        }
        Ok(response)
    }

    /// Complete independent requests, returning results in request order.
    /// A failure in one slot does not affect the others.
    pub fn complete_batch(
        &self,
        requests: &[ChatRequest],
    ) -> Vec<Result<ChatResponse, ProviderError>> {
        self.complete_batch_tallied(requests, &CallTally::new())
    }

    pub fn complete_batch_tallied(
        &self,
        requests: &[ChatRequest],
        tally: &CallTally,
    ) -> Vec<Result<ChatResponse, ProviderError>> {
        self.exec
            .map(requests, |req| self.complete_tallied(req, tally))
    }
}
