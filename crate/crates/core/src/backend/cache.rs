//! Response caching and record/replay tapes.
//!
//! A tape is a line-delimited file of [`TapeEntry`] values,
//! `{"digest": ..., "request": ..., "response": ...}`. Lookups are keyed by
//! digest, so replay does not depend on call order.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendStats, CacheKey, ChatBackend, ChatRequest, ChatResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapeEntry {
    pub digest: CacheKey,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

/// Reads every entry of a tape, failing on the first corrupt line.
pub fn read_tape(path: &Path) -> Result<Vec<TapeEntry>, BackendError> {
    let file = File::open(path).map_err(|source| BackendError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| BackendError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let tape_err = |message: String| BackendError::Tape {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let entry: TapeEntry = serde_json::from_str(&line).map_err(|e| tape_err(e.to_string()))?;
        if entry.digest != entry.request.cache_key() {
            return Err(tape_err(format!(
                "digest {} does not match its request",
                entry.digest
            )));
        }
        entries.push(entry);
    }
    Ok(entries)
}

struct TapeWriter {
    path: PathBuf,
    file: File,
}

impl TapeWriter {
    fn open(path: &Path) -> Result<Self, BackendError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| BackendError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| BackendError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    fn append(&mut self, entry: &TapeEntry) -> Result<(), BackendError> {
        let mut line = serde_json::to_string(entry).expect("tape entry serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| BackendError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Caches responses of an inner backend, optionally persisting every new
/// entry to a tape (record mode).
pub struct CachedBackend<B> {
    inner: B,
    entries: RwLock<HashMap<CacheKey, ChatResponse>>,
    tape: Option<Mutex<TapeWriter>>,
    calls: AtomicU64,
    hits: AtomicU64,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            entries: RwLock::new(HashMap::new()),
            tape: None,
            calls: AtomicU64::new(0),
            hits: AtomicU64::new(0),
        }
    }

    /// Loads existing entries from `path` (if present) and appends new ones.
    pub fn with_tape(inner: B, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let mut me = Self::new(inner);
        if path.exists() {
            let mut map = me.entries.write().expect("cache lock");
            for e in read_tape(path)? {
                map.entry(e.digest).or_insert(e.response);
            }
        }
        me.tape = Some(Mutex::new(TapeWriter::open(path)?));
        Ok(me)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key = request.cache_key();
        if let Some(hit) = self.entries.read().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(ChatResponse {
                cached: true,
                ..hit.clone()
            });
        }
        let fresh = self.inner.complete(request)?;
        let stored = {
            let mut map = self.entries.write().expect("cache lock");
            if let Some(existing) = map.get(&key) {
                // another worker won the race; its value is authoritative
                return Ok(ChatResponse {
                    cached: true,
                    ..existing.clone()
                });
            }
            let stored = ChatResponse {
                cached: false,
                ..fresh
            };
            map.insert(key.clone(), stored.clone());
            stored
        };
        if let Some(tape) = &self.tape {
            tape.lock().expect("tape lock").append(&TapeEntry {
                digest: key,
                request: request.clone(),
                response: stored.clone(),
            })?;
        }
        Ok(stored)
    }

    fn stats(&self) -> BackendStats {
        let inner = self.inner.stats();
        BackendStats {
            calls: self.calls.load(Ordering::Relaxed),
            cache_hits: self.hits.load(Ordering::Relaxed),
            attempts: inner.attempts,
        }
    }
}

/// Serves responses from a tape only.
pub struct ReplayBackend {
    entries: HashMap<CacheKey, ChatResponse>,
    fallback: Option<Arc<dyn ChatBackend>>,
    calls: AtomicU64,
    hits: AtomicU64,
}

impl ReplayBackend {
    /// Strict replay: a request missing from the tape is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        for e in read_tape(path.as_ref())? {
            entries.entry(e.digest).or_insert(e.response);
        }
        Ok(Self {
            entries,
            fallback: None,
            calls: AtomicU64::new(0),
            hits: AtomicU64::new(0),
        })
    }

    /// Lenient replay: misses are forwarded to `fallback`.
    pub fn with_fallback(mut self, fallback: Arc<dyn ChatBackend>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key = request.cache_key();
        match self.entries.get(&key) {
            Some(r) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Ok(ChatResponse {
                    cached: true,
                    ..r.clone()
                })
            }
            None => match &self.fallback {
                Some(f) => f.complete(request),
                None => Err(BackendError::ReplayMiss(key)),
            },
        }
    }

    fn stats(&self) -> BackendStats {
        BackendStats {
            calls: self.calls.load(Ordering::Relaxed),
            cache_hits: self.hits.load(Ordering::Relaxed),
            attempts: 0,
        }
    }
}

/// Proxies `inner` and appends every new (digest, response) pair to the tape.
pub fn record_session<B: ChatBackend>(
    tape_path: impl AsRef<Path>,
    inner: B,
) -> Result<CachedBackend<B>, BackendError> {
    CachedBackend::with_tape(inner, tape_path)
}

/// Serves only from the tape.
pub fn replay_session(tape_path: impl AsRef<Path>) -> Result<ReplayBackend, BackendError> {
    ReplayBackend::open(tape_path)
}
