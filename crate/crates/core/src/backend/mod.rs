//! Chat-completion backends.
//!
//! Everything that talks to a model goes through [`ChatBackend`]. The
//! implementations are:
//!
//! * [`http::OpenAiBackend`]: an OpenAI-compatible `/v1/chat/completions`
//!   endpoint with retries and an in-flight limit,
//! * [`cache::CachedBackend`]: a caching wrapper that can persist to a tape,
//! * [`cache::ReplayBackend`]: serves only from a tape, never from the network,
//! * [`mock::ScriptedBackend`] and [`mock::FnBackend`]: test doubles,
//! * [`simulated::SimulatedBackend`]: a deterministic offline stand-in model.

pub mod cache;
pub mod http;
pub mod mock;
pub mod simulated;
pub mod tokens;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{record_session, replay_session, CachedBackend, ReplayBackend, TapeEntry};
pub use http::{OpenAiBackend, RetryPolicy};
pub use mock::{FnBackend, ScriptedBackend};
pub use simulated::SimulatedBackend;
pub use tokens::{ApproxTokenCounter, TokenCounter, WhitespaceTokenCounter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
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

/// Sampling parameters shared by every call a component makes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for CallParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 2048,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub backend_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(backend_id: impl Into<String>, messages: Vec<ChatMessage>, params: &CallParams) -> Self {
        Self {
            backend_id: backend_id.into(),
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            seed: params.seed,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let invalid = |why: &str| Err(BackendError::InvalidRequest(why.to_string()));
        match self.messages.first() {
            None => return invalid("messages must not be empty"),
            Some(m) if m.role == Role::Assistant => {
                return invalid("first message must be a system or user message")
            }
            _ => {}
        }
        if self
            .messages
            .iter()
            .any(|m| m.role != Role::Assistant && m.content.is_empty())
        {
            return invalid("system and user messages must not be empty");
        }
        if !(self.temperature >= 0.0) {
            return invalid("temperature must be non-negative");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        Ok(())
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey::of(self)
    }

    /// Content of the last user message, which is what most prompt handlers
    /// inspect.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub cached: bool,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            prompt_tokens: 0,
            completion_tokens: 0,
            cached: false,
            latency_ms: 0,
        }
    }
}

/// SHA-256 over the canonical JSON serialization of a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn of(request: &ChatRequest) -> Self {
        // struct field order is fixed, so serde_json output is canonical
        let canonical = serde_json::to_vec(request).expect("request serializes");
        CacheKey(hex::encode(Sha256::digest(&canonical)))
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

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend {0:?} is not registered")]
    UnknownBackend(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend {backend} unreachable after {attempts} attempt(s): {message}")]
    Transport {
        backend: String,
        attempts: u32,
        message: String,
    },
    #[error("backend {backend} returned HTTP {status}: {body}")]
    Http {
        backend: String,
        status: u16,
        body: String,
    },
    #[error("replay miss for request digest {0}")]
    ReplayMiss(CacheKey),
    #[error("tape {path}: line {line}: {message}")]
    Tape {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scripted backend exhausted after {0} response(s)")]
    ScriptExhausted(usize),
    #[error("backend failure: {0}")]
    Other(String),
}

/// Call counters exposed for run manifests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendStats {
    pub calls: u64,
    pub cache_hits: u64,
    pub attempts: u64,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    fn stats(&self) -> BackendStats {
        BackendStats::default()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }

    fn stats(&self) -> BackendStats {
        (**self).stats()
    }
}

/// Backends by id. Dispatches on [`ChatRequest::backend_id`].
#[derive(Clone, Default)]
pub struct Backends {
    map: BTreeMap<String, Arc<dyn ChatBackend>>,
}

impl Backends {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: impl Into<String>, backend: Arc<dyn ChatBackend>) -> &mut Self {
        self.map.insert(id.into(), backend);
        self
    }

    pub fn with(mut self, id: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        self.register(id, backend);
        self
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn ChatBackend>, BackendError> {
        self.map
            .get(id)
            .ok_or_else(|| BackendError::UnknownBackend(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.map.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn stats(&self) -> BTreeMap<String, BackendStats> {
        self.map
            .iter()
            .map(|(id, b)| (id.clone(), b.stats()))
            .collect()
    }
}

impl ChatBackend for Backends {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        self.get(&request.backend_id)?.complete(request)
    }
}

/// A backend bound to one id and one set of sampling parameters.
///
/// This is the handle the evaluator, pipelines and dataset builder hold.
#[derive(Clone)]
pub struct ModelHandle {
    pub backend_id: String,
    pub params: CallParams,
    backend: Arc<dyn ChatBackend>,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("backend_id", &self.backend_id)
            .field("params", &self.params)
            .finish()
    }
}

impl ModelHandle {
    pub fn new(backend_id: impl Into<String>, backend: Arc<dyn ChatBackend>, params: CallParams) -> Self {
        Self {
            backend_id: backend_id.into(),
            params,
            backend,
        }
    }

    pub fn with_params(&self, params: CallParams) -> Self {
        Self {
            params,
            ..self.clone()
        }
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest::new(self.backend_id.clone(), messages, &self.params)
    }

    pub fn send(&self, messages: Vec<ChatMessage>) -> Result<ChatResponse, BackendError> {
        let request = self.request(messages);
        request.validate()?;
        self.backend.complete(&request)
    }

    /// Single user turn, returning only the reply text.
    pub fn ask(&self, prompt: impl Into<String>) -> Result<String, BackendError> {
        self.send(vec![ChatMessage::user(prompt)]).map(|r| r.content)
    }
}
