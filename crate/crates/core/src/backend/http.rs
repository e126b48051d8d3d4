//! OpenAI-compatible chat-completion client.
//!
//! Sends `POST {base_url}/v1/chat/completions` with body
//! `{model, messages, temperature, max_tokens[, seed]}` and a bearer token
//! read from `REFINERY_API_KEY`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendStats, ChatBackend, ChatRequest, ChatResponse};

pub const API_KEY_ENV: &str = "REFINERY_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt` (1-based); doubles after each failure.
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << (attempt - 2).min(16)))
    }
}

/// Outcome of one attempt inside [`with_retries`].
pub enum Attempt<T> {
    Done(T),
    Retry(String),
    Fail(BackendError),
}

/// Runs `f` until it succeeds, fails permanently or the budget is spent.
/// Returns the value and the number of attempts made.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    backend: &str,
    mut f: impl FnMut(u32) -> Attempt<T>,
) -> Result<(T, u32), BackendError> {
    let max = policy.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=max {
        let delay = policy.delay_before(attempt);
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        match f(attempt) {
            Attempt::Done(v) => return Ok((v, attempt)),
            Attempt::Fail(e) => return Err(e),
            Attempt::Retry(msg) => {
                log::warn!("{backend}: attempt {attempt}/{max} failed: {msg}");
                last = msg;
            }
        }
    }
    Err(BackendError::Transport {
        backend: backend.to_string(),
        attempts: max,
        message: last,
    })
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePass<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct OpenAiBackend {
    id: String,
    base_url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
    gate: Gate,
    calls: AtomicU64,
    attempts: AtomicU64,
}

impl OpenAiBackend {
    pub fn new(id: impl Into<String>, base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        Self {
            id: id.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            retry: RetryPolicy::default(),
            agent,
            gate: Gate::new(4),
            calls: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.gate = Gate::new(n);
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }

    /// The JSON body sent for `request`.
    pub fn wire_body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt<Value> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fail(BackendError::Http {
                backend: self.id.clone(),
                status,
                body: text,
            });
        }
        match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fail(BackendError::Other(format!(
                "{}: malformed completion body: {e}",
                self.id
            ))),
        }
    }
}

impl ChatBackend for OpenAiBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let body = self.wire_body(request);
        let _pass = self.gate.acquire();
        let started = Instant::now();
        let (value, _) = with_retries(&self.retry, &self.id, |_| {
            self.attempts.fetch_add(1, Ordering::Relaxed);
            self.attempt(&body)
        })?;
        parse_completion(&self.id, &value, started.elapsed().as_millis() as u64)
    }

    fn stats(&self) -> BackendStats {
        BackendStats {
            calls: self.calls.load(Ordering::Relaxed),
            cache_hits: 0,
            attempts: self.attempts.load(Ordering::Relaxed),
        }
    }
}

fn parse_completion(backend: &str, v: &Value, latency_ms: u64) -> Result<ChatResponse, BackendError> {
    let content = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| BackendError::Other(format!("{backend}: completion has no message content")))?;
    Ok(ChatResponse {
        content: content.to_string(),
        prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        cached: false,
        latency_ms,
    })
}
