//! Sweeps of pipelines × feedback tiers × order policies over a corpus.
//!
//! A run has two phases. The shared phase computes, once per record and
//! tier, the detector labels and the before-scores. The refinement phase
//! then runs every (tier, pipeline, policy) combination on those labels and
//! re-evaluates the revised summary. Only ordering differs across policies,
//! so Max–Min gaps isolate order effects.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendStats, Backends, CacheKey, ChatMessage, ModelHandle};
use crate::config::{Config, ConfigError};
use crate::corpus::{Corpus, CorpusEntry, CorpusError, OutputRecord};
use crate::evaluator::{alignment_prompt, fact_check_prompt, Evaluator};
use crate::feedback::{choose_order, FeedbackLabels, OrderPolicy};
use crate::model::{Dimension, DimensionScores, KeyFactSet, SummaryRecord};
use crate::pipeline::{run_pipeline, LabelMode, PipelineKind, PipelineModels, RefineInput, RefinementResult};
use crate::stats::{
    emit_table, paired_bootstrap, paired_bootstrap_grouped, BootstrapConfig, ReportRow, ScoreSeries, TableFormat,
    TrialMatrix, TrialSummary,
};

pub const DEFAULT_FAILURE_BUDGET: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failures} of {total} records failed, over the budget of {budget}")]
    BudgetExceeded { failures: usize, total: usize, budget: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackTier {
    High,
    Low,
}

impl fmt::Display for FeedbackTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackTier::High => "high",
            FeedbackTier::Low => "low",
        })
    }
}

impl FromStr for FeedbackTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(FeedbackTier::High),
            "low" => Ok(FeedbackTier::Low),
            other => Err(format!("unknown feedback tier {other:?} (expected high or low)")),
        }
    }
}

/// Parses an order policy, filling in `seed` when the text names none.
pub fn parse_policy(text: &str, seed: u64) -> Result<OrderPolicy, String> {
    let policy: OrderPolicy = text.parse().map_err(|e: crate::feedback::FeedbackError| e.to_string())?;
    let parts = text.split(':').count();
    Ok(match policy {
        OrderPolicy::RandomPerSample { .. } if parts < 2 => OrderPolicy::RandomPerSample { seed },
        OrderPolicy::LastFixed { last, .. } if parts < 3 => OrderPolicy::LastFixed { last, seed },
        p => p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub corpus: PathBuf,
    pub pipelines: Vec<PipelineKind>,
    pub tiers: Vec<FeedbackTier>,
    pub policies: Vec<OrderPolicy>,
    pub detectors: BTreeMap<FeedbackTier, String>,
    pub refine: String,
    #[serde(default)]
    pub reason: Option<String>,
    pub eval: String,
    pub seed: u64,
    #[serde(default)]
    pub stale_labels: bool,
    pub failure_budget: f64,
    pub bootstrap_resamples: u64,
    #[serde(default)]
    pub group_by_document: bool,
    pub concurrency: usize,
}

impl ExperimentPlan {
    /// A plan using one backend id for every role.
    pub fn single_backend(corpus: impl Into<PathBuf>, backend: &str, pipelines: Vec<PipelineKind>, seed: u64) -> Self {
        Self {
            corpus: corpus.into(),
            pipelines,
            tiers: vec![FeedbackTier::High],
            policies: vec![OrderPolicy::default()],
            detectors: BTreeMap::from([(FeedbackTier::High, backend.to_string()), (FeedbackTier::Low, backend.to_string())]),
            refine: backend.into(),
            reason: None,
            eval: backend.into(),
            seed,
            stale_labels: false,
            failure_budget: DEFAULT_FAILURE_BUDGET,
            bootstrap_resamples: crate::stats::DEFAULT_RESAMPLES,
            group_by_document: false,
            concurrency: 1,
        }
    }

    /// Builds a plan from config sections. `seed` overrides the config seed.
    pub fn from_config(config: &Config, seed: u64) -> Result<Self, ExperimentError> {
        let plan_err = |m: String| ExperimentError::Plan(m);
        let corpus = config
            .corpus
            .path
            .as_ref()
            .map(|p| config.resolve(p))
            .ok_or_else(|| plan_err("[corpus] path is not set".into()))?;
        let p = &config.pipelines;
        let pipelines = p
            .kinds
            .iter()
            .map(|k| k.parse::<PipelineKind>().map_err(|e| plan_err(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let tiers = p
            .tiers
            .iter()
            .map(|t| t.parse::<FeedbackTier>().map_err(plan_err))
            .collect::<Result<Vec<_>, _>>()?;
        let policies = config
            .trials
            .policies
            .iter()
            .map(|t| parse_policy(t, seed).map_err(plan_err))
            .collect::<Result<Vec<_>, _>>()?;
        let refine = config.role_backend(&p.refine, "pipelines.refine")?;
        let eval = config.role_backend(&p.eval, "pipelines.eval")?;
        let mut detectors = BTreeMap::new();
        for tier in &tiers {
            let role = match tier {
                FeedbackTier::High => &p.detector_high,
                FeedbackTier::Low => &p.detector_low,
            };
            detectors.insert(*tier, config.role_backend(role, &format!("pipelines.detector_{tier}"))?);
        }
        Ok(Self {
            corpus,
            pipelines,
            tiers,
            policies,
            detectors,
            refine,
            reason: p.reason.clone(),
            eval,
            seed,
            stale_labels: p.stale_labels,
            failure_budget: config.trials.failure_budget,
            bootstrap_resamples: config.trials.bootstrap_resamples,
            group_by_document: config.trials.group_by_document,
            concurrency: config.defaults.concurrency,
        })
    }

    pub fn validate(&self, backends: &Backends) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Plan(m));
        if self.pipelines.is_empty() {
            return bad("at least one pipeline is required".into());
        }
        if self.tiers.is_empty() {
            return bad("at least one feedback tier is required".into());
        }
        if self.policies.is_empty() {
            return bad("at least one order policy is required".into());
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1".into());
        }
        let mut ids = vec![("refine", &self.refine), ("eval", &self.eval)];
        if let Some(r) = &self.reason {
            ids.push(("reason", r));
        }
        for tier in &self.tiers {
            match self.detectors.get(tier) {
                Some(id) => ids.push(("detector", id)),
                None => return bad(format!("no detector backend for tier {tier}")),
            }
        }
        for (role, id) in ids {
            if !backends.contains(id) {
                return bad(format!("{role} backend {id:?} is not registered"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub stage: String,
    pub message: String,
}

/// Result of one (record, tier, pipeline, policy) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub record_id: String,
    pub doc_id: String,
    pub summarizer: String,
    pub pipeline: PipelineKind,
    pub tier: FeedbackTier,
    pub policy: String,
    #[serde(default)]
    pub order: Option<Vec<Dimension>>,
    #[serde(default)]
    pub labels: Option<FeedbackLabels>,
    #[serde(default)]
    pub before: Option<DimensionScores>,
    #[serde(default)]
    pub after: Option<DimensionScores>,
    #[serde(default)]
    pub result: Option<RefinementResult>,
    /// Digests of the fact-check and alignment requests behind `after`.
    #[serde(default)]
    pub after_digests: Vec<String>,
    #[serde(default)]
    pub failure: Option<FailureInfo>,
}

impl OutcomeRecord {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.before.is_some() && self.after.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub started_at: String,
    pub finished_at: String,
    pub version: String,
    pub seed: u64,
    pub seed_source: String,
    pub plan: ExperimentPlan,
    pub status: RunStatus,
    pub records: usize,
    pub outcomes: usize,
    pub failures: usize,
    pub backend_stats: BTreeMap<String, BackendStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub plan: ExperimentPlan,
    pub records: Vec<OutcomeRecord>,
    pub status: RunStatus,
    pub manifest: Manifest,
}

/// Labels and before-scores of one record under one tier.
struct Shared {
    labels: FeedbackLabels,
    before: DimensionScores,
}

struct Prepared<'c> {
    entry: &'c CorpusEntry,
    summary: &'c SummaryRecord,
    index: u64,
    keyfacts: Result<KeyFactSet, String>,
}

fn pool(concurrency: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool")
}

fn digest(model: &ModelHandle, prompt: String) -> String {
    CacheKey::of(&model.request(vec![ChatMessage::user(prompt)])).0
}

/// Runs the plan over `corpus`. Per-record failures are isolated; the run
/// fails only when their share exceeds the plan's budget.
pub fn run_experiment(
    plan: &ExperimentPlan,
    corpus: &Corpus,
    backends: &Backends,
    config: &Config,
) -> Result<ExperimentOutcome, ExperimentError> {
    plan.validate(backends)?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let refine = config.handle(backends, &plan.refine)?;
    let reason = plan.reason.as_ref().map(|r| config.handle(backends, r)).transpose()?;
    let eval_model = config.handle(backends, &plan.eval)?;
    let eval = Evaluator::new(eval_model.clone());
    let mut detectors = BTreeMap::new();
    for tier in &plan.tiers {
        let h = config.handle(backends, &plan.detectors[tier])?;
        detectors.insert(*tier, (h.clone(), Evaluator::new(h)));
    }
    let workers = pool(plan.concurrency);

    // key facts: from the corpus, or extracted once per document
    let keyfacts: Vec<Result<KeyFactSet, String>> = workers.install(|| {
        corpus
            .entries
            .par_iter()
            .map(|e| match &e.keyfacts {
                Some(k) => Ok(k.clone()),
                None => eval
                    .extract_key_facts(&e.document.id, &e.document.text)
                    .map(|x| x.keyfacts)
                    .map_err(|err| err.to_string()),
            })
            .collect()
    });
    let prepared: Vec<Prepared<'_>> = corpus
        .entries
        .iter()
        .zip(&keyfacts)
        .flat_map(|(entry, kf)| entry.summaries.iter().map(move |s| (entry, s, kf.clone())))
        .enumerate()
        .map(|(i, (entry, summary, keyfacts))| Prepared {
            entry,
            summary,
            index: i as u64,
            keyfacts,
        })
        .collect();

    let mut records = Vec::new();
    for tier in &plan.tiers {
        let (det_model, detector) = &detectors[tier];
        let shared: Vec<Result<Shared, FailureInfo>> = workers.install(|| {
            prepared
                .par_iter()
                .map(|p| {
                    let fail = |stage: &str, m: String| FailureInfo {
                        stage: stage.into(),
                        message: m,
                    };
                    let kf = p.keyfacts.as_ref().map_err(|m| fail("keyfacts", m.clone()))?;
                    let doc = &p.entry.document;
                    let det = detector
                        .evaluate(doc, p.summary, kf)
                        .map_err(|e| fail("detect", e.to_string()))?;
                    let labels = det
                        .labels(p.summary.len(), kf.len())
                        .map_err(|e| fail("detect", e.to_string()))?;
                    let before = if det_model.backend_id == eval_model.backend_id {
                        det.scores
                    } else {
                        eval.evaluate(doc, p.summary, kf)
                            .map_err(|e| fail("evaluate-before", e.to_string()))?
                            .scores
                    };
                    Ok(Shared { labels, before })
                })
                .collect()
        });

        for kind in &plan.pipelines {
            for policy in &plan.policies {
                let cells: Vec<OutcomeRecord> = workers.install(|| {
                    prepared
                        .par_iter()
                        .zip(&shared)
                        .map(|(p, sh)| {
                            run_cell(
                                p,
                                sh,
                                CellContext {
                                    kind: *kind,
                                    tier: *tier,
                                    policy,
                                    refine: &refine,
                                    reason: reason.as_ref(),
                                    detector_model: det_model,
                                    detector,
                                    eval: &eval,
                                    eval_model: &eval_model,
                                    stale: plan.stale_labels,
                                },
                            )
                        })
                        .collect()
                });
                records.extend(cells);
            }
        }
    }

    let failures = records.iter().filter(|r| r.failure.is_some()).count();
    let status = if failures == 0 {
        RunStatus::Complete
    } else if failures as f64 <= plan.failure_budget * records.len() as f64 {
        RunStatus::Partial
    } else {
        RunStatus::Failed
    };
    let manifest = Manifest {
        run_id: uuid::Uuid::new_v4().to_string(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: plan.seed,
        seed_source: "plan".into(),
        plan: plan.clone(),
        status,
        records: prepared.len(),
        outcomes: records.len() - failures,
        failures,
        backend_stats: backends.stats(),
    };
    Ok(ExperimentOutcome {
        plan: plan.clone(),
        records,
        status,
        manifest,
    })
}

struct CellContext<'a> {
    kind: PipelineKind,
    tier: FeedbackTier,
    policy: &'a OrderPolicy,
    refine: &'a ModelHandle,
    reason: Option<&'a ModelHandle>,
    detector_model: &'a ModelHandle,
    detector: &'a Evaluator,
    eval: &'a Evaluator,
    eval_model: &'a ModelHandle,
    stale: bool,
}

fn run_cell(p: &Prepared<'_>, shared: &Result<Shared, FailureInfo>, cx: CellContext<'_>) -> OutcomeRecord {
    let mut out = OutcomeRecord {
        record_id: p.summary.record_id(),
        doc_id: p.summary.doc_id.clone(),
        summarizer: p.summary.summarizer_id.clone(),
        pipeline: cx.kind,
        tier: cx.tier,
        policy: cx.policy.label(),
        order: None,
        labels: None,
        before: None,
        after: None,
        result: None,
        after_digests: Vec::new(),
        failure: None,
    };
    let sh = match shared {
        Ok(s) => s,
        Err(f) => {
            out.failure = Some(f.clone());
            return out;
        }
    };
    let kf = p.keyfacts.as_ref().expect("shared phase succeeded, so key facts exist");
    out.labels = Some(sh.labels.clone());
    out.before = Some(sh.before);
    let order = choose_order(cx.policy, p.index);
    out.order = Some(order.to_vec());
    let doc = &p.entry.document;
    let input = RefineInput {
        document: doc,
        summary: p.summary,
        keyfacts: kf,
        labels: &sh.labels,
    };
    let models = PipelineModels {
        refine: cx.refine,
        reason: cx.reason,
        detector: Some(cx.detector_model),
        label_mode: if cx.stale {
            LabelMode::Stale
        } else {
            LabelMode::Relabel(cx.detector)
        },
    };
    let result = match run_pipeline(cx.kind, input, order, models, None) {
        Ok(r) => r,
        Err(e) => {
            out.failure = Some(FailureInfo {
                stage: "refine".into(),
                message: e.to_string(),
            });
            return out;
        }
    };
    match cx.eval.evaluate(doc, &result.revised, kf) {
        Ok(e) => {
            out.after = Some(e.scores);
            out.after_digests = vec![
                digest(cx.eval_model, fact_check_prompt(doc, &result.revised)),
                digest(cx.eval_model, alignment_prompt(&result.revised, kf)),
            ];
        }
        Err(e) => {
            out.failure = Some(FailureInfo {
                stage: "evaluate-after".into(),
                message: e.to_string(),
            });
        }
    }
    out.result = Some(result);
    out
}

/// Before/after report rows, one per (tier, pipeline, policy), over the
/// records that succeeded in that cell.
pub fn report_rows(records: &[OutcomeRecord], resamples: u64, seed: u64, group_by_document: bool) -> Vec<ReportRow> {
    let mut keys: Vec<(FeedbackTier, PipelineKind, String)> = Vec::new();
    for r in records {
        let k = (r.tier, r.pipeline, r.policy.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let multi_policy = keys.iter().map(|k| &k.2).collect::<std::collections::BTreeSet<_>>().len() > 1;
    let multi_tier = keys.iter().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().len() > 1;
    let mut rows = Vec::new();
    for (tier, kind, policy) in keys {
        let cell: Vec<&OutcomeRecord> = records
            .iter()
            .filter(|r| r.tier == tier && r.pipeline == kind && r.policy == policy && r.succeeded())
            .collect();
        if cell.is_empty() {
            continue;
        }
        let ids: Vec<&str> = cell.iter().map(|r| r.record_id.as_str()).collect();
        let before: Vec<DimensionScores> = cell.iter().map(|r| r.before.expect("succeeded")).collect();
        let after: Vec<DimensionScores> = cell.iter().map(|r| r.after.expect("succeeded")).collect();
        let before_label = if multi_tier {
            format!("Before Refine ({tier})")
        } else {
            "Before Refine".to_string()
        };
        let mut label = kind.title();
        if multi_policy {
            label = format!("{label} [{policy}]");
        }
        if multi_tier {
            label = format!("{label} ({tier})");
        }
        let b = TrialSummary::from_scores(before_label, &before).expect("non-empty cell");
        let a = TrialSummary::from_scores(label.clone(), &after).expect("non-empty cell");
        let bs = ScoreSeries::from_scores("before", ids.iter().copied().zip(&before));
        let as_ = ScoreSeries::from_scores("after", ids.iter().copied().zip(&after));
        let groups: Vec<String> = cell.iter().map(|r| r.doc_id.clone()).collect();
        let cfg = BootstrapConfig::new(resamples, seed);
        let p = [0, 1, 2].map(|i| {
            let r = if group_by_document {
                paired_bootstrap_grouped(&bs[i], &as_[i], &groups, &cfg)
            } else {
                paired_bootstrap(&bs[i], &as_[i], &cfg)
            };
            r.ok().map(|s| s.p_value)
        });
        rows.push(ReportRow::new(label, b, a).with_p_values(p));
    }
    rows
}

/// One trial matrix per (tier, pipeline): a row per policy plus Max–Min.
pub fn trial_matrices(records: &[OutcomeRecord]) -> Vec<(FeedbackTier, PipelineKind, TrialMatrix)> {
    let mut out = Vec::new();
    let mut seen = Vec::new();
    for r in records {
        if !seen.contains(&(r.tier, r.pipeline)) {
            seen.push((r.tier, r.pipeline));
        }
    }
    for (tier, kind) in seen {
        let mut policies: Vec<String> = Vec::new();
        for r in records.iter().filter(|r| r.tier == tier && r.pipeline == kind) {
            if !policies.contains(&r.policy) {
                policies.push(r.policy.clone());
            }
        }
        let trials: Vec<TrialSummary> = policies
            .iter()
            .filter_map(|p| {
                let after: Vec<DimensionScores> = records
                    .iter()
                    .filter(|r| r.tier == tier && r.pipeline == kind && &r.policy == p && r.succeeded())
                    .map(|r| r.after.expect("succeeded"))
                    .collect();
                TrialSummary::from_scores(p.clone(), &after).ok()
            })
            .collect();
        if let Ok(m) = TrialMatrix::new(trials) {
            out.push((tier, kind, m));
        }
    }
    out
}

/// Runs `plan` once per policy in `trials`, sharing labels across them.
pub fn trial_sweep(
    plan: &ExperimentPlan,
    trials: &[OrderPolicy],
    corpus: &Corpus,
    backends: &Backends,
    config: &Config,
) -> Result<(ExperimentOutcome, Vec<(FeedbackTier, PipelineKind, TrialMatrix)>), ExperimentError> {
    if trials.is_empty() {
        return Err(ExperimentError::Plan("trial sweep needs at least one policy".into()));
    }
    let plan = ExperimentPlan {
        policies: trials.to_vec(),
        ..plan.clone()
    };
    let outcome = run_experiment(&plan, corpus, backends, config)?;
    let matrices = trial_matrices(&outcome.records);
    Ok((outcome, matrices))
}

pub fn outcomes_jsonl(records: &[OutcomeRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(&OutputRecord::Outcome(r.clone())).expect("outcomes serialize"));
        s.push('\n');
    }
    s
}

pub fn load_outcomes(path: impl AsRef<Path>) -> Result<Vec<OutcomeRecord>, ExperimentError> {
    let lines: Vec<OutputRecord> = crate::corpus::load_results(path)?;
    Ok(lines
        .into_iter()
        .filter_map(|l| match l {
            OutputRecord::Outcome(o) => Some(o),
            _ => None,
        })
        .collect())
}

/// Markdown report: the before/after table, then trial matrices when more
/// than one policy ran.
pub fn render_report(records: &[OutcomeRecord], resamples: u64, seed: u64, group_by_document: bool, format: TableFormat) -> String {
    let rows = report_rows(records, resamples, seed, group_by_document);
    let mut out = emit_table(&rows, format);
    if format == TableFormat::Markdown {
        for (tier, kind, m) in trial_matrices(records) {
            if m.trials.len() > 1 {
                out.push('\n');
                out.push_str(&m.to_markdown(&format!("{} ({tier})", kind.title())));
            }
        }
    }
    out
}

/// Writes `outcomes.jsonl`, `report.md`, `report.csv` and `manifest.json`
/// into `dir`. Only the manifest carries timestamps.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: impl AsRef<Path>) -> Result<(), ExperimentError> {
    let dir = dir.as_ref();
    let io = |path: PathBuf| move |source| ExperimentError::Io { path, source };
    std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let plan = &outcome.plan;
    let files = [
        ("outcomes.jsonl", outcomes_jsonl(&outcome.records)),
        (
            "report.md",
            render_report(&outcome.records, plan.bootstrap_resamples, plan.seed, plan.group_by_document, TableFormat::Markdown),
        ),
        (
            "report.csv",
            render_report(&outcome.records, plan.bootstrap_resamples, plan.seed, plan.group_by_document, TableFormat::Csv),
        ),
        (
            "manifest.json",
            serde_json::to_string_pretty(&outcome.manifest).expect("manifest serializes") + "\n",
        ),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io(path.clone()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatBackend, SimulatedBackend};
    use std::sync::Arc;

    const CORPUS: &str = r#"{"kind":"document","id":"d1","format":"non_dialogue","text":"The cat sat on the mat. The dog barked at noon. Rain fell in the town."}
{"kind":"summary","doc_id":"d1","summarizer":"m1","sentences":["The cat sat on the mat.","The zebra danced."]}
{"kind":"keyfacts","doc_id":"d1","facts":["The cat sat on the mat.","The dog barked at noon.","Rain fell in the town."]}
{"kind":"document","id":"d2","format":"non_dialogue","text":"Bob bought bread. Alice sold apples. The market closed early."}
{"kind":"summary","doc_id":"d2","summarizer":"m1","sentences":["Bob bought bread.","Alice sold apples."]}
{"kind":"summary","doc_id":"d2","summarizer":"m2","sentences":["Bob stole bread."]}
"#;

    fn setup() -> (Corpus, Backends, Config) {
        let corpus = crate::corpus::parse_corpus(CORPUS).unwrap();
        let sim: Arc<dyn ChatBackend> = Arc::new(SimulatedBackend::new());
        (corpus, Backends::new().with("sim", sim), Config::simulated())
    }

    #[test]
    fn runs_every_cell() {
        let (corpus, backends, config) = setup();
        let plan = ExperimentPlan::single_backend("c", "sim", vec![PipelineKind::P4, PipelineKind::ReFeed], 7);
        let out = run_experiment(&plan, &corpus, &backends, &config).unwrap();
        assert_eq!(out.records.len(), 6);
        assert_eq!(out.status, RunStatus::Complete);
        for r in &out.records {
            assert!(r.succeeded(), "{:?}", r.failure);
            assert_eq!(r.after_digests.len(), 2);
        }
        let rows = report_rows(&out.records, 1000, 7, false);
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn deterministic_outputs() {
        let (corpus, backends, config) = setup();
        let mut plan = ExperimentPlan::single_backend("c", "sim", vec![PipelineKind::ReFeed, PipelineKind::P2], 3);
        plan.policies = vec![OrderPolicy::RandomPerSample { seed: 3 }];
        plan.concurrency = 4;
        let a = run_experiment(&plan, &corpus, &backends, &config).unwrap();
        let b = run_experiment(&plan, &corpus, &backends, &config).unwrap();
        assert_eq!(outcomes_jsonl(&a.records), outcomes_jsonl(&b.records));
        let fmt = |o: &ExperimentOutcome| render_report(&o.records, 500, 3, false, TableFormat::Csv);
        assert_eq!(fmt(&a), fmt(&b));
    }

    #[test]
    fn sweep_shares_labels() {
        let (corpus, backends, config) = setup();
        let plan = ExperimentPlan::single_backend("c", "sim", vec![PipelineKind::ReFeed], 1);
        let trials = ["random", "last:faith", "last:comp", "last:conc"].map(|t| parse_policy(t, 1).unwrap());
        let (out, matrices) = trial_sweep(&plan, &trials, &corpus, &backends, &config).unwrap();
        assert_eq!(matrices.len(), 1);
        assert_eq!(matrices[0].2.trials.len(), 4);
        let by_record: BTreeMap<&str, Vec<&FeedbackLabels>> = out.records.iter().fold(BTreeMap::new(), |mut m, r| {
            m.entry(r.record_id.as_str()).or_default().push(r.labels.as_ref().unwrap());
            m
        });
        for labels in by_record.values() {
            assert!(labels.windows(2).all(|w| w[0] == w[1]));
        }
        for r in out.records.iter().filter(|r| r.policy == "last-conc") {
            assert_eq!(r.order.as_ref().unwrap()[2], Dimension::Conciseness);
        }
    }

    #[test]
    fn policy_seed_filling() {
        assert_eq!(parse_policy("random", 9).unwrap(), OrderPolicy::RandomPerSample { seed: 9 });
        assert_eq!(parse_policy("random:4", 9).unwrap(), OrderPolicy::RandomPerSample { seed: 4 });
        assert_eq!(
            parse_policy("last:conc", 9).unwrap(),
            OrderPolicy::LastFixed {
                last: Dimension::Conciseness,
                seed: 9
            }
        );
        assert!(parse_policy("sideways", 0).is_err());
    }

    #[test]
    fn validation() {
        let (_, backends, _) = setup();
        let mut plan = ExperimentPlan::single_backend("c", "sim", vec![], 0);
        assert!(plan.validate(&backends).is_err());
        plan.pipelines = vec![PipelineKind::P4];
        plan.eval = "gpt".into();
        assert!(plan.validate(&backends).unwrap_err().to_string().contains("\"gpt\""));
    }
}
