//! Reasoning dataset construction.
//!
//! Candidates are generated or taken from the corpus, labelled by a
//! detector, and the best one becomes the goal. A teacher model then writes
//! reasoning for every candidate; outputs go through a format filter and a
//! verification filter before being emitted as chat training records.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendError, ChatMessage, ModelHandle, Role, TokenCounter};
use crate::corpus::Corpus;
use crate::evaluator::Evaluator;
use crate::feedback::{choose_order, render_feedback, FeedbackLabels, Order, OrderPolicy};
use crate::json_repair::{parse_as, Shape};
use crate::model::{Dimension, DimensionScores, Document, Fraction, KeyFactSet, SummaryRecord};
use crate::pipeline::parse::extract_boxed;
use crate::pipeline::{refeed_system_prompt, refeed_user_prompt};
use crate::prompts;
use crate::template::render;

pub const DEFAULT_TOKEN_CAP: usize = 5000;

#[derive(Debug, Error)]
pub enum DatabuildError {
    #[error("no summarizer backends given")]
    NoBackends,
    #[error("document {0} has no scored candidates")]
    NoCandidates(String),
    #[error("teacher call for {record_id} failed: {source}")]
    Teacher {
        record_id: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Feedback(#[from] crate::feedback::FeedbackError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub summarizer_id: String,
    pub summary: SummaryRecord,
    #[serde(default)]
    pub scores: Option<DimensionScores>,
    #[serde(default)]
    pub labels: Option<FeedbackLabels>,
}

impl Candidate {
    pub fn unscored(summary: SummaryRecord) -> Self {
        Self {
            summarizer_id: summary.summarizer_id.clone(),
            summary,
            scores: None,
            labels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub doc_id: String,
    pub candidates: Vec<Candidate>,
}

/// A candidate or sample removed before the filters, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub doc_id: String,
    pub summarizer_id: String,
    pub stage: String,
    pub reason: String,
}

impl Dropped {
    fn new(doc_id: &str, summarizer_id: &str, stage: &str, reason: impl fmt::Display) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            summarizer_id: summarizer_id.to_string(),
            stage: stage.to_string(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct GeneratedSummary {
    summary: String,
}

pub fn summary_prompt(doc: &Document) -> String {
    render(prompts::SUMMARY_GENERATION, &[("document", &doc.text)])
        .trim_end()
        .to_string()
}

/// One candidate per backend, named after the backend id. Failed or
/// unparseable generations are dropped.
pub fn generate_summaries(
    doc: &Document,
    backends: &[ModelHandle],
) -> Result<(CandidateSet, Vec<Dropped>), DatabuildError> {
    if backends.is_empty() {
        return Err(DatabuildError::NoBackends);
    }
    let prompt = summary_prompt(doc);
    let mut candidates = Vec::new();
    let mut drops = Vec::new();
    for model in backends {
        let id = &model.backend_id;
        let parsed = model
            .ask(prompt.clone())
            .map_err(|e| e.to_string())
            .and_then(|raw| parse_as::<GeneratedSummary>(&raw, Shape::Object).map_err(|e| e.to_string()))
            .and_then(|g| SummaryRecord::from_text(doc.id.clone(), id.clone(), &g.summary).map_err(|e| e.to_string()));
        match parsed {
            Ok(rec) => candidates.push(Candidate::unscored(rec)),
            Err(reason) => drops.push(Dropped::new(&doc.id, id, "generate", reason)),
        }
    }
    Ok((
        CandidateSet {
            doc_id: doc.id.clone(),
            candidates,
        },
        drops,
    ))
}

/// Scores and labels every candidate. Candidates the detector cannot
/// evaluate are excluded.
pub fn collect_initial_feedback(
    set: CandidateSet,
    doc: &Document,
    keyfacts: &KeyFactSet,
    detector: &Evaluator,
) -> (CandidateSet, Vec<Dropped>) {
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    for mut c in set.candidates {
        let evaluated = detector
            .evaluate(doc, &c.summary, keyfacts)
            .map_err(|e| e.to_string())
            .and_then(|e| {
                let labels = e.labels(c.summary.len(), keyfacts.len()).map_err(|err| err.to_string())?;
                Ok((e.scores, labels))
            });
        match evaluated {
            Ok((scores, labels)) => {
                c.scores = Some(scores);
                c.labels = Some(labels);
                kept.push(c);
            }
            Err(e) => drops.push(Dropped::new(&doc.id, &c.summarizer_id, "initial-feedback", e)),
        }
    }
    (
        CandidateSet {
            doc_id: set.doc_id,
            candidates: kept,
        },
        drops,
    )
}

/// Highest exact composite; the earliest candidate wins ties.
pub fn select_best_summary(set: &CandidateSet) -> Result<&Candidate, DatabuildError> {
    let mut best: Option<(&Candidate, Fraction)> = None;
    for c in &set.candidates {
        let Some(scores) = c.scores else { continue };
        let composite = scores.composite();
        if best.is_none_or(|(_, b)| composite > b) {
            best = Some((c, composite));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| DatabuildError::NoCandidates(set.doc_id.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningStrategy {
    #[default]
    Reflective,
    Receptive,
}

impl fmt::Display for ReasoningStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReasoningStrategy::Reflective => "Reflective",
            ReasoningStrategy::Receptive => "Receptive",
        })
    }
}

/// Teacher prompt. Only the reflective variant carries the best summary
/// and the error-type definitions.
pub fn teacher_prompt(
    strategy: ReasoningStrategy,
    doc: &Document,
    summary: &SummaryRecord,
    feedback: &str,
    order: &[Dimension],
    best: &SummaryRecord,
) -> String {
    let summary_text = summary.text();
    let text = match strategy {
        ReasoningStrategy::Reflective => render(
            prompts::REFLECTIVE_GENERATION,
            &[
                ("Instruction", &prompts::instruction_block(order, prompts::reflective_teacher_instruction)),
                ("Document", &doc.text),
                ("Summary", &summary_text),
                ("BestSummary", &best.text()),
                ("Feedback", feedback),
            ],
        ),
        ReasoningStrategy::Receptive => render(
            prompts::RECEPTIVE_GENERATION,
            &[
                ("Instruction", &prompts::instruction_block(order, prompts::receptive_instruction)),
                ("Document", &doc.text),
                ("Summary", &summary_text),
                ("Feedback", feedback),
            ],
        ),
    };
    text.trim_end().to_string()
}

const ANSWER_MARKERS: [&str; 4] = [
    "**Final Reviesed Summary**",
    "**Final Revised Summary**",
    "**Final Reviesed Summary:**",
    "**Final Revised Summary:**",
];

/// `(reasoning, revised)` from a teacher reply. Reasoning is the think span
/// when present, otherwise the text before the answer marker. Either part
/// may come back empty.
pub fn parse_teacher_output(raw: &str) -> (String, String) {
    let revised = extract_boxed(raw).unwrap_or_default();
    let reasoning = if let Some(end) = raw.find("</think>") {
        let start = raw.find("<think>").map_or(0, |s| s + "<think>".len());
        raw.get(start..end).unwrap_or_default()
    } else {
        let cut = ANSWER_MARKERS
            .iter()
            .filter_map(|m| raw.find(m))
            .min()
            .or_else(|| raw.rfind("\\[").filter(|&p| raw[p..].contains("\\boxed")))
            .or_else(|| raw.rfind("\\boxed"))
            .unwrap_or(raw.len());
        &raw[..cut]
    };
    (reasoning.trim().to_string(), revised)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterStage {
    Format,
    Verification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub stage: FilterStage,
    pub passed: bool,
    pub reason: String,
}

impl FilterVerdict {
    pub fn pass(stage: FilterStage) -> Self {
        Self {
            stage,
            passed: true,
            reason: String::new(),
        }
    }

    pub fn fail(stage: FilterStage, reason: impl Into<String>) -> Self {
        let reason = reason.into();
        debug_assert!(!reason.is_empty());
        Self {
            stage,
            passed: false,
            reason,
        }
    }
}

/// Teacher output for one (document, summary, feedback) triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningSample {
    pub document: Document,
    pub summary: SummaryRecord,
    pub keyfacts: KeyFactSet,
    pub labels: FeedbackLabels,
    pub before: DimensionScores,
    pub best_summary: String,
    pub strategy: ReasoningStrategy,
    pub tier: String,
    pub order_used: Vec<Dimension>,
    pub raw: String,
    pub reasoning: String,
    pub revised: String,
    pub token_count: usize,
    #[serde(default)]
    pub after: Option<DimensionScores>,
    #[serde(default)]
    pub verdicts: Vec<FilterVerdict>,
}

impl ReasoningSample {
    pub fn record_id(&self) -> String {
        self.summary.record_id()
    }

    pub fn passed(&self) -> bool {
        self.verdicts.len() == 2 && self.verdicts.iter().all(|v| v.passed)
    }

    pub fn format_passed(&self) -> bool {
        self.verdicts
            .iter()
            .any(|v| v.stage == FilterStage::Format && v.passed)
    }
}

/// What one teacher call needs besides the model.
pub struct ReasoningInput<'a> {
    pub document: &'a Document,
    pub summary: &'a SummaryRecord,
    pub keyfacts: &'a KeyFactSet,
    pub labels: &'a FeedbackLabels,
    pub before: DimensionScores,
    pub best: &'a SummaryRecord,
    pub order: Order,
    pub tier: &'a str,
}

/// Sends the teacher prompt and captures the raw reply. Unparseable replies
/// still produce a sample; the format filter rejects them.
pub fn generate_reasoning(
    input: ReasoningInput<'_>,
    strategy: ReasoningStrategy,
    teacher: &ModelHandle,
    counter: &dyn TokenCounter,
) -> Result<ReasoningSample, DatabuildError> {
    input.labels.check_lengths(input.summary.len(), input.keyfacts.len())?;
    let feedback = render_feedback(input.labels, input.summary, input.keyfacts, input.order).text();
    let prompt = teacher_prompt(strategy, input.document, input.summary, &feedback, &input.order, input.best);
    let raw = teacher.ask(prompt).map_err(|source| DatabuildError::Teacher {
        record_id: input.summary.record_id(),
        source,
    })?;
    let (reasoning, revised) = parse_teacher_output(&raw);
    Ok(ReasoningSample {
        document: input.document.clone(),
        summary: input.summary.clone(),
        keyfacts: input.keyfacts.clone(),
        labels: input.labels.clone(),
        before: input.before,
        best_summary: input.best.text(),
        strategy,
        tier: input.tier.to_string(),
        order_used: input.order.to_vec(),
        token_count: counter.count(&raw),
        raw,
        reasoning,
        revised,
        after: None,
        verdicts: Vec::new(),
    })
}

/// Well-formed output within the token cap.
pub fn format_filter(sample: &ReasoningSample, token_cap: usize) -> FilterVerdict {
    if sample.revised.trim().is_empty() {
        return FilterVerdict::fail(FilterStage::Format, "malformed: no boxed revised summary");
    }
    if sample.reasoning.trim().is_empty() {
        return FilterVerdict::fail(FilterStage::Format, "malformed: empty reasoning");
    }
    if sample.token_count > token_cap {
        return FilterVerdict::fail(
            FilterStage::Format,
            format!("over cap: {} tokens > {token_cap}", sample.token_count),
        );
    }
    FilterVerdict::pass(FilterStage::Format)
}

/// Faithfulness 1, completeness and conciseness at least 1/2, and no
/// dimension worse than before (strictly better in every dimension when
/// `strict_delta`).
pub fn verification_filter(before: &DimensionScores, after: &DimensionScores, strict_delta: bool) -> FilterVerdict {
    let one = Fraction::from_integer(1);
    let half = Fraction::new(1, 2);
    let mut failures = Vec::new();
    if after.faithfulness != one {
        failures.push(format!("faithfulness {} != 1", after.faithfulness));
    }
    if after.completeness < half {
        failures.push(format!("completeness {} < 1/2", after.completeness));
    }
    if after.conciseness < half {
        failures.push(format!("conciseness {} < 1/2", after.conciseness));
    }
    for d in Dimension::ALL {
        let (b, a) = (before.get(d), after.get(d));
        if strict_delta && a <= b {
            failures.push(format!("{d} did not improve ({b} -> {a})"));
        } else if a < b {
            failures.push(format!("{d} decreased ({b} -> {a})"));
        }
    }
    if failures.is_empty() {
        FilterVerdict::pass(FilterStage::Verification)
    } else {
        FilterVerdict::fail(FilterStage::Verification, failures.join("; "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub record_id: String,
    pub doc_id: String,
    pub summarizer: String,
    pub strategy: ReasoningStrategy,
    pub tier: String,
    pub order: Vec<Dimension>,
    pub before: DimensionScores,
    #[serde(default)]
    pub after: Option<DimensionScores>,
    pub token_count: usize,
}

/// One chat-format training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub messages: Vec<ChatMessage>,
    pub meta: TrainingMeta,
}

impl TrainingRecord {
    fn content(&self, role: Role) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == role)
            .map_or("", |m| m.content.as_str())
    }

    pub fn system(&self) -> &str {
        self.content(Role::System)
    }

    pub fn user(&self) -> &str {
        self.content(Role::User)
    }

    pub fn assistant(&self) -> &str {
        self.content(Role::Assistant)
    }
}

/// Think span followed by an answer span holding the boxed summary.
pub fn assistant_text(reasoning: &str, revised: &str) -> String {
    format!(
        "<think>\n{}\n</think>\n\n<answer>\n**Final Revised Summary:**\n\\[ \\boxed{{\\text{{{}}}}} \\]\n</answer>",
        reasoning.trim(),
        revised.trim()
    )
}

/// User prompt of a training record: the inference prompt of the matching
/// strategy, with no goal summary and no error-type definitions.
pub fn training_user_prompt(sample: &ReasoningSample, order: Order) -> String {
    let feedback = render_feedback(&sample.labels, &sample.summary, &sample.keyfacts, order).text();
    match sample.strategy {
        ReasoningStrategy::Reflective => refeed_user_prompt(&sample.document, &sample.summary, &order, &feedback),
        ReasoningStrategy::Receptive => render(
            prompts::RECEPTIVE_USER,
            &[
                ("Instruction", &prompts::instruction_block(&order, prompts::receptive_instruction)),
                ("Document", &sample.document.text),
                ("Summary", &sample.summary.text()),
                ("Feedback", &feedback),
            ],
        )
        .trim_end()
        .to_string(),
    }
}

/// Training records for samples that passed both filters, in input order.
/// With `shuffle_orders` the feedback order of record i is drawn from a
/// seeded stream; otherwise every record uses the default order.
pub fn emit_training_records(samples: &[ReasoningSample], shuffle_orders: bool, seed: u64) -> Vec<TrainingRecord> {
    let policy = if shuffle_orders {
        OrderPolicy::RandomPerSample { seed }
    } else {
        OrderPolicy::default()
    };
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let order = choose_order(&policy, i as u64);
            TrainingRecord {
                messages: vec![
                    ChatMessage::system(refeed_system_prompt()),
                    ChatMessage::user(training_user_prompt(s, order)),
                    ChatMessage::assistant(assistant_text(&s.reasoning, &s.revised)),
                ],
                meta: TrainingMeta {
                    record_id: s.record_id(),
                    doc_id: s.summary.doc_id.clone(),
                    summarizer: s.summary.summarizer_id.clone(),
                    strategy: s.strategy,
                    tier: s.tier.clone(),
                    order: order.to_vec(),
                    before: s.before,
                    after: s.after,
                    token_count: s.token_count,
                },
            }
        })
        .collect()
}

/// Sample counts after each stage, for one builder configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub pipeline: String,
    pub strategy: ReasoningStrategy,
    pub tier: String,
    pub original: u64,
    pub format_passed: u64,
    pub verification_passed: u64,
}

impl StageCounts {
    pub fn new(pipeline: impl Into<String>, strategy: ReasoningStrategy, tier: impl Into<String>) -> Self {
        Self {
            pipeline: pipeline.into(),
            strategy,
            tier: tier.into(),
            original: 0,
            format_passed: 0,
            verification_passed: 0,
        }
    }

    pub fn with_counts(mut self, original: u64, format_passed: u64, verification_passed: u64) -> Self {
        self.original = original;
        self.format_passed = format_passed;
        self.verification_passed = verification_passed;
        self
    }

    /// Adds another partial count of the same configuration.
    pub fn merge(mut self, other: &StageCounts) -> Self {
        self.original += other.original;
        self.format_passed += other.format_passed;
        self.verification_passed += other.verification_passed;
        self
    }

    /// Verification-passed over format-passed.
    pub fn ratio(&self) -> Option<f64> {
        (self.format_passed > 0).then(|| self.verification_passed as f64 / self.format_passed as f64)
    }

    pub fn ratio_text(&self) -> String {
        match self.ratio() {
            Some(r) => format!("{:.2}%", r * 100.0),
            None => "—".to_string(),
        }
    }
}

const LEDGER_HEADER: [&str; 7] = [
    "pipeline",
    "reasoning strategy",
    "feedback tier",
    "original",
    "format-filtered",
    "verification-filtered",
    "ratio",
];

/// Ledger table as CSV.
pub fn stage_ledger(rows: &[StageCounts]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LEDGER_HEADER).expect("in-memory csv write");
    for r in rows {
        w.write_record([
            r.pipeline.clone(),
            r.strategy.to_string(),
            r.tier.clone(),
            r.original.to_string(),
            r.format_passed.to_string(),
            r.verification_passed.to_string(),
            r.ratio_text(),
        ])
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Label for the ledger's pipeline column.
    pub pipeline: String,
    pub strategy: ReasoningStrategy,
    pub tier: String,
    pub token_cap: usize,
    pub strict_delta: bool,
    pub shuffle_orders: bool,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            pipeline: "ReFeed".into(),
            strategy: ReasoningStrategy::Reflective,
            tier: "high".into(),
            token_cap: DEFAULT_TOKEN_CAP,
            strict_delta: false,
            shuffle_orders: true,
            seed: 0,
        }
    }
}

/// Models used by the builder.
pub struct BuildModels<'a> {
    /// Extra candidate generators; corpus summaries are always included.
    pub summarizers: &'a [ModelHandle],
    /// Produces initial labels and before-scores; also extracts missing key facts.
    pub detector: &'a Evaluator,
    pub teacher: &'a ModelHandle,
    /// Re-evaluates revised summaries for the verification filter.
    pub verifier: &'a Evaluator,
    pub counter: &'a dyn TokenCounter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBuild {
    /// Every sample that reached the filters, with its verdicts.
    pub samples: Vec<ReasoningSample>,
    pub records: Vec<TrainingRecord>,
    pub ledger: StageCounts,
    pub dropped: Vec<Dropped>,
}

impl DatasetBuild {
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("training records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Stable per-record index for drawing generation-time orders.
fn stable_index(key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
}

struct DocResult {
    samples: Vec<ReasoningSample>,
    dropped: Vec<Dropped>,
    attempted: u64,
}

fn build_document(
    entry: &crate::corpus::CorpusEntry,
    config: &BuildConfig,
    models: &BuildModels<'_>,
) -> DocResult {
    let doc = &entry.document;
    let mut out = DocResult {
        samples: Vec::new(),
        dropped: Vec::new(),
        attempted: 0,
    };
    let keyfacts = match &entry.keyfacts {
        Some(k) => k.clone(),
        None => match models.detector.extract_key_facts(&doc.id, &doc.text) {
            Ok(x) => x.keyfacts,
            Err(e) => {
                out.dropped.push(Dropped::new(&doc.id, "", "keyfacts", e));
                return out;
            }
        },
    };

    let mut set = CandidateSet {
        doc_id: doc.id.clone(),
        candidates: entry.summaries.iter().cloned().map(Candidate::unscored).collect(),
    };
    if !models.summarizers.is_empty() {
        match generate_summaries(doc, models.summarizers) {
            Ok((generated, drops)) => {
                set.candidates.extend(generated.candidates);
                out.dropped.extend(drops);
            }
            Err(e) => out.dropped.push(Dropped::new(&doc.id, "", "generate", e)),
        }
    }
    let (set, drops) = collect_initial_feedback(set, doc, &keyfacts, models.detector);
    out.dropped.extend(drops);
    let best = match select_best_summary(&set) {
        Ok(b) => b.summary.clone(),
        Err(e) => {
            out.dropped.push(Dropped::new(&doc.id, "", "select-best", e));
            return out;
        }
    };

    let order_policy = if config.shuffle_orders {
        OrderPolicy::RandomPerSample { seed: config.seed }
    } else {
        OrderPolicy::default()
    };
    for c in &set.candidates {
        let (Some(labels), Some(before)) = (&c.labels, c.scores) else { continue };
        out.attempted += 1;
        let input = ReasoningInput {
            document: doc,
            summary: &c.summary,
            keyfacts: &keyfacts,
            labels,
            before,
            best: &best,
            order: choose_order(&order_policy, stable_index(&c.summary.record_id())),
            tier: &config.tier,
        };
        let mut sample = match generate_reasoning(input, config.strategy, models.teacher, models.counter) {
            Ok(s) => s,
            Err(e) => {
                out.dropped.push(Dropped::new(&doc.id, &c.summarizer_id, "teacher", e));
                continue;
            }
        };
        let fmt = format_filter(&sample, config.token_cap);
        let format_ok = fmt.passed;
        sample.verdicts.push(fmt);
        if format_ok {
            let verdict = match SummaryRecord::from_text(doc.id.clone(), c.summarizer_id.clone(), &sample.revised)
                .map_err(|e| e.to_string())
                .and_then(|rev| models.verifier.evaluate(doc, &rev, &keyfacts).map_err(|e| e.to_string()))
            {
                Ok(eval) => {
                    sample.after = Some(eval.scores);
                    verification_filter(&sample.before, &eval.scores, config.strict_delta)
                }
                Err(e) => FilterVerdict::fail(FilterStage::Verification, format!("re-evaluation failed: {e}")),
            };
            sample.verdicts.push(verdict);
        }
        out.samples.push(sample);
    }
    out
}

/// Full build over a corpus. Documents run in parallel; results are
/// assembled in corpus order, so output is independent of scheduling.
pub fn build_dataset(corpus: &Corpus, config: &BuildConfig, models: &BuildModels<'_>) -> DatasetBuild {
    let per_doc: Vec<DocResult> = corpus
        .entries
        .par_iter()
        .map(|e| build_document(e, config, models))
        .collect();

    let mut samples = Vec::new();
    let mut dropped = Vec::new();
    let mut attempted = 0;
    for r in per_doc {
        attempted += r.attempted;
        samples.extend(r.samples);
        dropped.extend(r.dropped);
    }
    let format_passed = samples.iter().filter(|s| s.format_passed()).count() as u64;
    let passing: Vec<ReasoningSample> = samples.iter().filter(|s| s.passed()).cloned().collect();
    let ledger = StageCounts::new(config.pipeline.clone(), config.strategy, config.tier.clone()).with_counts(
        attempted,
        format_passed,
        passing.len() as u64,
    );
    let records = emit_training_records(&passing, config.shuffle_orders, config.seed);
    DatasetBuild {
        samples,
        records,
        ledger,
        dropped,
    }
}

/// The receptive variant: same stages, receptive teacher prompt.
pub fn build_p4ft_dataset(corpus: &Corpus, config: &BuildConfig, models: &BuildModels<'_>) -> DatasetBuild {
    let config = BuildConfig {
        strategy: ReasoningStrategy::Receptive,
        pipeline: if config.pipeline == BuildConfig::default().pipeline {
            "P4-FT".into()
        } else {
            config.pipeline.clone()
        },
        ..config.clone()
    };
    build_dataset(corpus, &config, models)
}
