//! Test doubles.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{BackendError, BackendStats, ChatBackend, ChatRequest, ChatResponse};

/// Returns queued responses in order and remembers every request.
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<ChatRequest>>,
    served: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
            seen: Mutex::new(Vec::new()),
            served: Mutex::new(0),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().expect("lock").clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("lock").len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.seen.lock().expect("lock").push(request.clone());
        let mut served = self.served.lock().expect("lock");
        match self.queue.lock().expect("lock").pop_front() {
            Some(content) => {
                *served += 1;
                Ok(ChatResponse::text(content))
            }
            None => Err(BackendError::ScriptExhausted(*served)),
        }
    }

    fn stats(&self) -> BackendStats {
        let calls = self.seen.lock().expect("lock").len() as u64;
        BackendStats {
            calls,
            cache_hits: 0,
            attempts: calls,
        }
    }
}

/// Answers with a closure of the request.
pub struct FnBackend<F> {
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (self.f)(request).map(ChatResponse::text)
    }
}
