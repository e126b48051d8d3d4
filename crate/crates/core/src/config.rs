//! Run configuration, read from a TOML file.
//!
//! ```toml
//! [defaults]
//! temperature = 0.0
//! max_tokens = 2048
//! retries = 3
//! concurrency = 4
//!
//! [backends.gpt]
//! kind = "openai"
//! base_url = "https://api.openai.com"
//! model = "gpt-4o"
//!
//! [backends.tape]
//! kind = "record"
//! inner = "gpt"
//! tape = "tapes/gpt.jsonl"
//!
//! [corpus]
//! path = "corpus.jsonl"
//!
//! [pipelines]
//! kinds = ["p4", "refeed"]
//! tiers = ["high"]
//! refine = "tape"
//! eval = "tape"
//! detector_high = "tape"
//!
//! [trials]
//! policies = ["random", "last:faith", "last:comp", "last:conc"]
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    http::API_KEY_ENV, BackendError, Backends, CachedBackend, CallParams, ChatBackend, ModelHandle,
    OpenAiBackend, ReplayBackend, RetryPolicy, SimulatedBackend,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub temperature: f64,
    pub max_tokens: u32,
    pub retries: u32,
    pub concurrency: usize,
    pub seed: Option<u64>,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 2048,
            retries: 3,
            concurrency: 4,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub cache: Option<PathBuf>,
    pub tapes: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSpec {
    /// OpenAI-compatible chat completions endpoint.
    Openai {
        base_url: String,
        model: String,
        #[serde(default)]
        max_in_flight: Option<usize>,
    },
    /// Caches `inner` and appends new calls to `tape`.
    Record { inner: String, tape: PathBuf },
    /// Serves from `tape`; misses go to `fallback` or fail.
    Replay {
        tape: PathBuf,
        #[serde(default)]
        fallback: Option<String>,
    },
    /// Deterministic offline heuristic model.
    Simulated,
}

impl BackendSpec {
    fn depends_on(&self) -> Option<&str> {
        match self {
            BackendSpec::Record { inner, .. } => Some(inner),
            BackendSpec::Replay { fallback, .. } => fallback.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelinesSection {
    pub kinds: Vec<String>,
    pub tiers: Vec<String>,
    pub refine: Option<String>,
    /// DCR critique model; defaults to `refine`.
    pub reason: Option<String>,
    pub eval: Option<String>,
    pub detector_high: Option<String>,
    pub detector_low: Option<String>,
    pub stale_labels: bool,
}

impl Default for PipelinesSection {
    fn default() -> Self {
        Self {
            kinds: vec!["refeed".into()],
            tiers: vec!["high".into()],
            refine: None,
            reason: None,
            eval: None,
            detector_high: None,
            detector_low: None,
            stale_labels: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialsSection {
    pub policies: Vec<String>,
    /// Largest tolerated share of failed records.
    pub failure_budget: f64,
    pub bootstrap_resamples: u64,
    pub group_by_document: bool,
}

impl Default for TrialsSection {
    fn default() -> Self {
        Self {
            policies: vec!["fixed".into()],
            failure_budget: 0.05,
            bootstrap_resamples: crate::stats::DEFAULT_RESAMPLES,
            group_by_document: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatabuildSection {
    pub teacher: Option<String>,
    pub summarizers: Vec<String>,
    pub strategy: String,
    pub tier: String,
    pub token_cap: usize,
    pub strict_delta: bool,
    pub shuffle_orders: bool,
}

impl Default for DatabuildSection {
    fn default() -> Self {
        Self {
            teacher: None,
            summarizers: Vec::new(),
            strategy: "reflective".into(),
            tier: "high".into(),
            token_cap: crate::databuild::DEFAULT_TOKEN_CAP,
            strict_delta: false,
            shuffle_orders: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub defaults: Defaults,
    pub paths: Paths,
    pub backends: BTreeMap<String, BackendSpec>,
    pub corpus: CorpusSection,
    pub pipelines: PipelinesSection,
    pub trials: TrialsSection,
    pub databuild: DatabuildSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    /// A config with one simulated backend named `sim` used for every role.
    pub fn simulated() -> Self {
        let mut c = Config::default();
        c.backends.insert("sim".into(), BackendSpec::Simulated);
        c
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.defaults.concurrency == 0 {
            return bad("defaults.concurrency must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.trials.failure_budget) {
            return bad(format!("trials.failure_budget {} is outside [0, 1]", self.trials.failure_budget));
        }
        for (id, spec) in &self.backends {
            if let Some(dep) = spec.depends_on() {
                if !self.backends.contains_key(dep) {
                    return bad(format!("backend {id:?} refers to unknown backend {dep:?}"));
                }
            }
            // follow the dependency chain to catch cycles
            let mut seen = vec![id.as_str()];
            let mut cur = spec.depends_on();
            while let Some(next) = cur {
                if seen.contains(&next) {
                    return bad(format!("backend {id:?} has a dependency cycle"));
                }
                seen.push(next);
                cur = self.backends.get(next).and_then(BackendSpec::depends_on);
            }
        }
        let p = &self.pipelines;
        let db = &self.databuild;
        for (field, id) in [
            ("pipelines.refine", &p.refine),
            ("pipelines.reason", &p.reason),
            ("pipelines.eval", &p.eval),
            ("pipelines.detector_high", &p.detector_high),
            ("pipelines.detector_low", &p.detector_low),
            ("databuild.teacher", &db.teacher),
        ] {
            if let Some(id) = id {
                if !self.backends.contains_key(id) {
                    return bad(format!("{field} refers to unknown backend {id:?}"));
                }
            }
        }
        for id in &db.summarizers {
            if !self.backends.contains_key(id) {
                return bad(format!("databuild.summarizers refers to unknown backend {id:?}"));
            }
        }
        Ok(())
    }

    /// The sole backend id when exactly one is configured.
    pub fn only_backend(&self) -> Option<&str> {
        let mut ids = self.backends.keys();
        match (ids.next(), ids.next()) {
            (Some(id), None) => Some(id),
            _ => None,
        }
    }

    /// `role` if set, else the only backend.
    pub fn role_backend(&self, role: &Option<String>, name: &str) -> Result<String, ConfigError> {
        role.clone()
            .or_else(|| self.only_backend().map(str::to_string))
            .ok_or_else(|| ConfigError::Invalid(format!("no backend configured for {name}")))
    }

    pub fn call_params(&self) -> CallParams {
        CallParams {
            temperature: self.defaults.temperature,
            max_tokens: self.defaults.max_tokens,
            seed: self.defaults.seed,
        }
    }

    /// Instantiates every configured backend.
    pub fn build_backends(&self) -> Result<Backends, ConfigError> {
        let mut built: BTreeMap<String, Arc<dyn ChatBackend>> = BTreeMap::new();
        // dependencies first; validate() guarantees termination
        while built.len() < self.backends.len() {
            for (id, spec) in &self.backends {
                if built.contains_key(id) || spec.depends_on().is_some_and(|d| !built.contains_key(d)) {
                    continue;
                }
                let backend: Arc<dyn ChatBackend> = match spec {
                    BackendSpec::Openai {
                        base_url,
                        model,
                        max_in_flight,
                    } => Arc::new(
                        OpenAiBackend::new(id.clone(), base_url.clone(), model.clone())
                            .with_api_key(std::env::var(API_KEY_ENV).ok())
                            .with_retry(RetryPolicy {
                                max_attempts: self.defaults.retries.max(1),
                                ..RetryPolicy::default()
                            })
                            .with_max_in_flight(max_in_flight.unwrap_or(self.defaults.concurrency)),
                    ),
                    BackendSpec::Record { inner, tape } => {
                        let inner = built[inner].clone();
                        Arc::new(CachedBackend::with_tape(inner, self.resolve(tape))?)
                    }
                    BackendSpec::Replay { tape, fallback } => {
                        let mut r = ReplayBackend::open(self.resolve(tape))?;
                        if let Some(f) = fallback {
                            r = r.with_fallback(built[f].clone());
                        }
                        Arc::new(r)
                    }
                    BackendSpec::Simulated => Arc::new(SimulatedBackend::new()),
                };
                built.insert(id.clone(), backend);
            }
        }
        let mut backends = Backends::new();
        for (id, b) in built {
            backends.register(id, b);
        }
        Ok(backends)
    }

    /// Model handle for `id` with the default call parameters. Requests are
    /// routed through `backends` by id.
    pub fn handle(&self, backends: &Backends, id: &str) -> Result<ModelHandle, ConfigError> {
        let b = backends.get(id)?.clone();
        Ok(ModelHandle::new(id, b, self.call_params()))
    }
}
