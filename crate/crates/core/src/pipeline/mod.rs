//! Refinement pipelines.
//!
//! | kind    | refinement calls | feedback                                   |
//! |---------|------------------|--------------------------------------------|
//! | P1      | 1                | one dimension                              |
//! | P2      | 3                | one dimension per fresh session            |
//! | P3      | 3                | one dimension per turn of one conversation |
//! | P4      | 1                | all three dimensions at once               |
//! | ReFeed  | 1                | all three, reflective system prompt        |
//! | DCR     | flagged + 1      | span critiques of unfaithful sentences     |
//! | ACUEval | 1                | unsupported atomic facts                   |

pub mod parse;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatMessage, ModelHandle};
use crate::evaluator::{EvalError, Evaluator};
use crate::feedback::{render_block, render_feedback, FeedbackError, FeedbackLabels, Order};
use crate::json_repair::{repair_and_parse_json, Shape};
use crate::model::{Dimension, Document, KeyFactSet, ModelError, SummaryRecord};
use crate::prompts;
use crate::template::render;

pub use parse::{extract_boxed, parse_reasoning, parse_refeed_output, parse_revised_summary, ExtractError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PipelineKind {
    P1(Dimension),
    P2,
    P3,
    P4,
    ReFeed,
    Dcr,
    AcuEval,
}

impl PipelineKind {
    /// Number of refinement calls, or `None` when it depends on labels.
    pub fn refinement_calls(self) -> Option<usize> {
        match self {
            PipelineKind::P2 | PipelineKind::P3 => Some(3),
            PipelineKind::Dcr => None,
            _ => Some(1),
        }
    }

    /// Display name used in reports.
    pub fn title(self) -> String {
        match self {
            PipelineKind::P1(d) => format!("P1 ({})", d.title()),
            PipelineKind::P2 => "P2".into(),
            PipelineKind::P3 => "P3".into(),
            PipelineKind::P4 => "P4".into(),
            PipelineKind::ReFeed => "ReFeed".into(),
            PipelineKind::Dcr => "DCR".into(),
            PipelineKind::AcuEval => "ACUEval".into(),
        }
    }

    pub fn all() -> Vec<PipelineKind> {
        let mut v: Vec<_> = Dimension::ALL.iter().map(|d| PipelineKind::P1(*d)).collect();
        v.extend([
            PipelineKind::P2,
            PipelineKind::P3,
            PipelineKind::P4,
            PipelineKind::ReFeed,
            PipelineKind::Dcr,
            PipelineKind::AcuEval,
        ]);
        v
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineKind::P1(Dimension::Faithfulness) => f.write_str("p1-faith"),
            PipelineKind::P1(Dimension::Completeness) => f.write_str("p1-comp"),
            PipelineKind::P1(Dimension::Conciseness) => f.write_str("p1-conc"),
            PipelineKind::P2 => f.write_str("p2"),
            PipelineKind::P3 => f.write_str("p3"),
            PipelineKind::P4 => f.write_str("p4"),
            PipelineKind::ReFeed => f.write_str("refeed"),
            PipelineKind::Dcr => f.write_str("dcr"),
            PipelineKind::AcuEval => f.write_str("acueval"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown pipeline {0:?} (expected p1-faith, p1-comp, p1-conc, p2, p3, p4, refeed, dcr or acueval)")]
pub struct UnknownPipeline(pub String);

impl FromStr for PipelineKind {
    type Err = UnknownPipeline;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(dim) = lower.strip_prefix("p1-").or_else(|| lower.strip_prefix("p1:")) {
            return dim
                .parse()
                .map(PipelineKind::P1)
                .map_err(|_| UnknownPipeline(s.to_string()));
        }
        Ok(match lower.as_str() {
            "p2" => PipelineKind::P2,
            "p3" => PipelineKind::P3,
            "p4" => PipelineKind::P4,
            "refeed" => PipelineKind::ReFeed,
            "dcr" => PipelineKind::Dcr,
            "acueval" => PipelineKind::AcuEval,
            _ => return Err(UnknownPipeline(s.to_string())),
        })
    }
}

impl From<PipelineKind> for String {
    fn from(k: PipelineKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for PipelineKind {
    type Error = UnknownPipeline;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Backend {
        stage: String,
        #[source]
        source: BackendError,
    },
    #[error("{stage}: could not extract a revised summary")]
    Extract { stage: String, raw: String },
    #[error("{stage}: revised summary is unusable: {source}")]
    Revised {
        stage: String,
        #[source]
        source: ModelError,
    },
    #[error("relabelling before {stage}: {source}")]
    Relabel {
        stage: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error("{stage}: {message}")]
    Detect { stage: String, message: String, raw: String },
}

impl PipelineError {
    pub fn raw(&self) -> Option<&str> {
        match self {
            PipelineError::Extract { raw, .. } | PipelineError::Detect { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

/// One message of a transcript, tagged with the session it belongs to.
/// Sessions are numbered from 0; a new number means fresh history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub session: usize,
    pub message: ChatMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub pipeline: PipelineKind,
    pub revised: SummaryRecord,
    #[serde(default)]
    pub reasoning: Option<String>,
    pub transcript: Vec<TranscriptEntry>,
    #[serde(default)]
    pub per_turn: Option<Vec<String>>,
    pub order_used: Vec<Dimension>,
}

impl RefinementResult {
    pub fn sessions(&self) -> usize {
        self.transcript.iter().map(|e| e.session + 1).max().unwrap_or(0)
    }

    /// Messages of one session, in order.
    pub fn session(&self, session: usize) -> Vec<ChatMessage> {
        self.transcript
            .iter()
            .filter(|e| e.session == session)
            .map(|e| e.message.clone())
            .collect()
    }
}

/// Everything a pipeline reads about one summary.
#[derive(Debug, Clone, Copy)]
pub struct RefineInput<'a> {
    pub document: &'a Document,
    pub summary: &'a SummaryRecord,
    pub keyfacts: &'a KeyFactSet,
    pub labels: &'a FeedbackLabels,
}

/// Produces fresh labels for an intermediate summary.
pub trait Labeler: Send + Sync {
    fn labels(&self, document: &Document, summary: &SummaryRecord, keyfacts: &KeyFactSet) -> Result<FeedbackLabels, EvalError>;
}

impl Labeler for Evaluator {
    fn labels(&self, document: &Document, summary: &SummaryRecord, keyfacts: &KeyFactSet) -> Result<FeedbackLabels, EvalError> {
        let eval = self.evaluate(document, summary, keyfacts)?;
        Ok(eval
            .labels(summary.len(), keyfacts.len())
            .expect("evaluation lengths match the summary"))
    }
}

/// How P2 and P3 obtain labels for turns 2 and 3.
#[derive(Clone, Copy)]
pub enum LabelMode<'a> {
    /// Re-evaluate the previous turn's output.
    Relabel(&'a dyn Labeler),
    /// Reuse the original labels, truncated or zero-padded to fit.
    Stale,
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    render(template, vars).trim_end().to_string()
}

fn call(model: &ModelHandle, stage: &str, messages: Vec<ChatMessage>) -> Result<String, PipelineError> {
    model.send(messages).map(|r| r.content).map_err(|source| PipelineError::Backend {
        stage: stage.to_string(),
        source,
    })
}

fn revised_record(base: &SummaryRecord, text: &str, stage: &str) -> Result<SummaryRecord, PipelineError> {
    let mut rec = SummaryRecord::from_text(base.doc_id.clone(), base.summarizer_id.clone(), text).map_err(|source| {
        PipelineError::Revised {
            stage: stage.to_string(),
            source,
        }
    })?;
    rec.extra = base.extra.clone();
    Ok(rec)
}

fn extract(raw: &str, stage: &str) -> Result<String, PipelineError> {
    parse_revised_summary(raw).map_err(|e| PipelineError::Extract {
        stage: stage.to_string(),
        raw: e.raw,
    })
}

/// The reason-and-refine prompt with the given instructions and feedback.
pub fn reason_refine_prompt(document: &Document, summary: &SummaryRecord, dims: &[Dimension], feedback: &str) -> String {
    fill(
        prompts::REFINE_REASON,
        &[
            ("Instruction", &prompts::instruction_block(dims, prompts::receptive_instruction)),
            ("Document", &document.text),
            ("Summary", &summary.text()),
            ("Feedback", feedback),
        ],
    )
}

pub fn run_p1(input: RefineInput<'_>, dim: Dimension, model: &ModelHandle) -> Result<RefinementResult, PipelineError> {
    input.labels.check_lengths(input.summary.len(), input.keyfacts.len())?;
    let feedback = render_block(dim, input.labels, input.summary, input.keyfacts);
    let prompt = reason_refine_prompt(input.document, input.summary, &[dim], &feedback);
    let messages = vec![ChatMessage::user(prompt)];
    let raw = call(model, "P1", messages.clone())?;
    let text = extract(&raw, "P1")?;
    let mut transcript: Vec<_> = messages.into_iter().map(|m| TranscriptEntry { session: 0, message: m }).collect();
    transcript.push(TranscriptEntry {
        session: 0,
        message: ChatMessage::assistant(&raw),
    });
    Ok(RefinementResult {
        pipeline: PipelineKind::P1(dim),
        revised: revised_record(input.summary, &text, "P1")?,
        reasoning: parse_reasoning(&raw),
        transcript,
        per_turn: None,
        order_used: vec![dim],
    })
}

fn turn_labels(
    input: &RefineInput<'_>,
    current: &SummaryRecord,
    turn: usize,
    mode: LabelMode<'_>,
    stage: &str,
) -> Result<FeedbackLabels, PipelineError> {
    if turn == 0 {
        return Ok(input.labels.clone());
    }
    match mode {
        LabelMode::Stale => Ok(input.labels.fit(current.len(), input.keyfacts.len())),
        LabelMode::Relabel(labeler) => labeler
            .labels(input.document, current, input.keyfacts)
            .map_err(|source| PipelineError::Relabel {
                stage: stage.to_string(),
                source,
            }),
    }
}

/// Three single-turn sessions, one dimension each, chained.
pub fn run_p2(input: RefineInput<'_>, order: Order, model: &ModelHandle, mode: LabelMode<'_>) -> Result<RefinementResult, PipelineError> {
    input.labels.check_lengths(input.summary.len(), input.keyfacts.len())?;
    let mut current = input.summary.clone();
    let mut transcript = Vec::new();
    let mut per_turn = Vec::new();
    let mut reasoning = Vec::new();
    for (turn, dim) in order.iter().enumerate() {
        let stage = format!("P2 turn {}", turn + 1);
        let labels = turn_labels(&input, &current, turn, mode, &stage)?;
        let feedback = render_block(*dim, &labels, &current, input.keyfacts);
        let prompt = reason_refine_prompt(input.document, &current, &[*dim], &feedback);
        let raw = call(model, &stage, vec![ChatMessage::user(&prompt)])?;
        transcript.push(TranscriptEntry { session: turn, message: ChatMessage::user(prompt) });
        transcript.push(TranscriptEntry { session: turn, message: ChatMessage::assistant(&raw) });
        let text = extract(&raw, &stage)?;
        current = revised_record(input.summary, &text, &stage)?;
        reasoning.extend(parse_reasoning(&raw));
        per_turn.push(text);
    }
    Ok(RefinementResult {
        pipeline: PipelineKind::P2,
        revised: current,
        reasoning: (!reasoning.is_empty()).then(|| reasoning.join("\n\n")),
        transcript,
        per_turn: Some(per_turn),
        order_used: order.to_vec(),
    })
}

/// One conversation; turn 1 carries all instructions, later turns only
/// the next dimension's feedback.
pub fn run_p3(input: RefineInput<'_>, order: Order, model: &ModelHandle, mode: LabelMode<'_>) -> Result<RefinementResult, PipelineError> {
    input.labels.check_lengths(input.summary.len(), input.keyfacts.len())?;
    let mut current = input.summary.clone();
    let mut history: Vec<ChatMessage> = Vec::new();
    let mut per_turn = Vec::new();
    let mut reasoning = Vec::new();
    for (turn, dim) in order.iter().enumerate() {
        let stage = format!("P3 turn {}", turn + 1);
        let labels = turn_labels(&input, &current, turn, mode, &stage)?;
        let feedback = render_block(*dim, &labels, &current, input.keyfacts);
        let prompt = if turn == 0 {
            reason_refine_prompt(input.document, &current, &order, &feedback)
        } else {
            fill(prompts::REFINE_FOLLOWUP, &[("Feedback", &feedback)])
        };
        history.push(ChatMessage::user(prompt));
        let raw = call(model, &stage, history.clone())?;
        history.push(ChatMessage::assistant(&raw));
        let text = extract(&raw, &stage)?;
        current = revised_record(input.summary, &text, &stage)?;
        reasoning.extend(parse_reasoning(&raw));
        per_turn.push(text);
    }
    Ok(RefinementResult {
        pipeline: PipelineKind::P3,
        revised: current,
        reasoning: (!reasoning.is_empty()).then(|| reasoning.join("\n\n")),
        transcript: history.into_iter().map(|m| TranscriptEntry { session: 0, message: m }).collect(),
        per_turn: Some(per_turn),
        order_used: order.to_vec(),
    })
}

fn single_call(
    kind: PipelineKind,
    messages: Vec<ChatMessage>,
    model: &ModelHandle,
    order_used: Vec<Dimension>,
    base: &SummaryRecord,
) -> Result<(RefinementResult, String), PipelineError> {
    let stage = kind.title();
    let raw = call(model, &stage, messages.clone())?;
    let (reasoning, text) = if kind == PipelineKind::ReFeed {
        let (r, t) = parse_refeed_output(&raw).map_err(|e| PipelineError::Extract {
            stage: stage.clone(),
            raw: e.raw,
        })?;
        ((!r.is_empty()).then_some(r), t)
    } else {
        (parse_reasoning(&raw), extract(&raw, &stage)?)
    };
    let mut transcript: Vec<_> = messages.into_iter().map(|m| TranscriptEntry { session: 0, message: m }).collect();
    transcript.push(TranscriptEntry { session: 0, message: ChatMessage::assistant(&raw) });
    Ok((
        RefinementResult {
            pipeline: kind,
            revised: revised_record(base, &text, &stage)?,
            reasoning,
            transcript,
            per_turn: None,
            order_used,
        },
        raw,
    ))
}

/// All three dimensions in one prompt; instructions and blocks follow `order`.
pub fn run_p4(input: RefineInput<'_>, order: Order, model: &ModelHandle) -> Result<RefinementResult, PipelineError> {
    input.labels.check_lengths(input.summary.len(), input.keyfacts.len())?;
    let feedback = render_feedback(input.labels, input.summary, input.keyfacts, order).text();
    let prompt = reason_refine_prompt(input.document, input.summary, &order, &feedback);
    single_call(PipelineKind::P4, vec![ChatMessage::user(prompt)], model, order.to_vec(), input.summary).map(|r| r.0)
}

/// User prompt of ReFeed inference and of training records.
pub fn refeed_user_prompt(document: &Document, summary: &SummaryRecord, order: &[Dimension], feedback: &str) -> String {
    fill(
        prompts::REFEED_USER,
        &[
            ("Instruction", &prompts::instruction_block(order, prompts::reflective_instruction)),
            ("Document", &document.text),
            ("Summary", &summary.text()),
            ("Feedback", feedback),
        ],
    )
}

pub fn refeed_system_prompt() -> String {
    prompts::REFEED_SYSTEM.trim_end().to_string()
}

pub fn run_refeed(input: RefineInput<'_>, order: Order, model: &ModelHandle) -> Result<RefinementResult, PipelineError> {
    input.labels.check_lengths(input.summary.len(), input.keyfacts.len())?;
    let feedback = render_feedback(input.labels, input.summary, input.keyfacts, order).text();
    let messages = vec![
        ChatMessage::system(refeed_system_prompt()),
        ChatMessage::user(refeed_user_prompt(input.document, input.summary, &order, &feedback)),
    ];
    single_call(PipelineKind::ReFeed, messages, model, order.to_vec(), input.summary).map(|r| r.0)
}

fn refine_only_prompt(document: &Document, summary: &SummaryRecord, feedback: &str) -> String {
    fill(
        prompts::REFINE_ONLY,
        &[("Document", &document.text), ("Summary", &summary.text()), ("Feedback", feedback)],
    )
}

/// Span critique per unfaithful sentence, then refinement on the critiques.
pub fn run_dcr(input: RefineInput<'_>, reason: &ModelHandle, refine: &ModelHandle) -> Result<RefinementResult, PipelineError> {
    if input.labels.faith.len() != input.summary.len() {
        return Err(FeedbackError::LengthMismatch {
            what: "faithfulness labels",
            expected: input.summary.len(),
            got: input.labels.faith.len(),
        }
        .into());
    }
    let mut transcript = Vec::new();
    let mut critiques = Vec::new();
    for (session, i) in input.labels.flagged(Dimension::Faithfulness).into_iter().enumerate() {
        let stage = format!("DCR critique of sentence {i}");
        let prompt = fill(
            prompts::DCR_REASON,
            &[
                ("Document", &input.document.text),
                ("Summary", input.summary.sentence(i).unwrap_or_default()),
            ],
        );
        let raw = call(reason, &stage, vec![ChatMessage::user(&prompt)])?;
        transcript.push(TranscriptEntry { session, message: ChatMessage::user(prompt) });
        transcript.push(TranscriptEntry { session, message: ChatMessage::assistant(&raw) });
        critiques.push(raw.trim().to_string());
    }
    let feedback = if critiques.is_empty() {
        prompts::DCR_NO_ISSUES.to_string()
    } else {
        critiques.join("\n\n")
    };
    let session = critiques.len();
    let prompt = refine_only_prompt(input.document, input.summary, &feedback);
    let raw = call(refine, "DCR refinement", vec![ChatMessage::user(&prompt)])?;
    transcript.push(TranscriptEntry { session, message: ChatMessage::user(prompt) });
    transcript.push(TranscriptEntry { session, message: ChatMessage::assistant(&raw) });
    let text = extract(&raw, "DCR refinement")?;
    Ok(RefinementResult {
        pipeline: PipelineKind::Dcr,
        revised: revised_record(input.summary, &text, "DCR refinement")?,
        reasoning: (!critiques.is_empty()).then_some(feedback),
        transcript,
        per_turn: None,
        order_used: vec![Dimension::Faithfulness],
    })
}

/// ACUEval feedback text for a list of unsupported atomic facts.
pub fn acueval_feedback(unsupported: &[String]) -> String {
    if unsupported.is_empty() {
        return prompts::ACUEVAL_CONSISTENT.to_string();
    }
    let bullets: Vec<String> = unsupported
        .iter()
        .map(|f| format!("- {}", f.replace(['\n', '\r'], " ")))
        .collect();
    fill(prompts::ACUEVAL_FEEDBACK, &[("Facts", &bullets.join("\n"))])
}

pub fn run_acueval(
    document: &Document,
    summary: &SummaryRecord,
    unsupported: &[String],
    model: &ModelHandle,
) -> Result<RefinementResult, PipelineError> {
    let prompt = refine_only_prompt(document, summary, &acueval_feedback(unsupported));
    single_call(
        PipelineKind::AcuEval,
        vec![ChatMessage::user(prompt)],
        model,
        vec![Dimension::Faithfulness],
        summary,
    )
    .map(|r| r.0)
}

/// Generic atomic-fact detection for ACUEval when no external list is
/// supplied. Returns the unsupported facts.
pub fn detect_unsupported_facts(
    document: &Document,
    summary: &SummaryRecord,
    model: &ModelHandle,
) -> Result<Vec<String>, PipelineError> {
    let stage = "ACUEval detection";
    let prompt = fill(
        prompts::ACUEVAL_DETECT,
        &[("Document", &document.text), ("Summary", &summary.text())],
    );
    let raw = call(model, stage, vec![ChatMessage::user(prompt)])?;
    let detect_err = |message: String| PipelineError::Detect {
        stage: stage.to_string(),
        message,
        raw: raw.clone(),
    };
    let value = repair_and_parse_json(&raw, Shape::Any).map_err(|e| detect_err(e.to_string()))?;
    let list = match &value {
        serde_json::Value::Array(a) => Some(a.clone()),
        serde_json::Value::Object(o) => o
            .get("unsupported facts")
            .or_else(|| o.get("unsupported_facts"))
            .and_then(|v| v.as_array().cloned()),
        _ => None,
    }
    .ok_or_else(|| detect_err("expected an \"unsupported facts\" list".into()))?;
    Ok(list
        .iter()
        .filter_map(|v| v.as_str())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect())
}

/// Models and options a pipeline run may need beyond its input.
#[derive(Clone, Copy)]
pub struct PipelineModels<'a> {
    pub refine: &'a ModelHandle,
    /// DCR critique model; defaults to `refine`.
    pub reason: Option<&'a ModelHandle>,
    /// ACUEval detection model; defaults to `refine`.
    pub detector: Option<&'a ModelHandle>,
    pub label_mode: LabelMode<'a>,
}

/// Runs `kind` on one input. `unsupported` overrides ACUEval detection.
pub fn run_pipeline(
    kind: PipelineKind,
    input: RefineInput<'_>,
    order: Order,
    models: PipelineModels<'_>,
    unsupported: Option<&[String]>,
) -> Result<RefinementResult, PipelineError> {
    match kind {
        PipelineKind::P1(dim) => run_p1(input, dim, models.refine),
        PipelineKind::P2 => run_p2(input, order, models.refine, models.label_mode),
        PipelineKind::P3 => run_p3(input, order, models.refine, models.label_mode),
        PipelineKind::P4 => run_p4(input, order, models.refine),
        PipelineKind::ReFeed => run_refeed(input, order, models.refine),
        PipelineKind::Dcr => run_dcr(input, models.reason.unwrap_or(models.refine), models.refine),
        PipelineKind::AcuEval => {
            let detected;
            let facts = match unsupported {
                Some(f) => f,
                None => {
                    detected = detect_unsupported_facts(
                        input.document,
                        input.summary,
                        models.detector.unwrap_or(models.refine),
                    )?;
                    &detected
                }
            };
            run_acueval(input.document, input.summary, facts, models.refine)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CallParams, Role, ScriptedBackend};
    use crate::model::DocumentFormat;
    use std::sync::Arc;

    struct Fixture {
        doc: Document,
        summary: SummaryRecord,
        keyfacts: KeyFactSet,
        labels: FeedbackLabels,
    }

    impl Fixture {
        fn new() -> Self {
            Self {
                doc: Document::new("d", "news", DocumentFormat::NonDialogue, "Doc text.").unwrap(),
                summary: SummaryRecord::new("d", "m", vec!["S one.".into(), "S two.".into(), "S three.".into()]).unwrap(),
                keyfacts: KeyFactSet::new("d", vec!["K one".into(), "K two".into()]).unwrap(),
                labels: FeedbackLabels::new(vec![1, 0, 1], vec![0, 1], vec![0, 0, 1]).unwrap(),
            }
        }

        fn input(&self) -> RefineInput<'_> {
            RefineInput {
                document: &self.doc,
                summary: &self.summary,
                keyfacts: &self.keyfacts,
                labels: &self.labels,
            }
        }
    }

    fn scripted<const N: usize>(replies: [&str; N]) -> (Arc<ScriptedBackend>, ModelHandle) {
        let b = Arc::new(ScriptedBackend::new(replies));
        (b.clone(), ModelHandle::new("m", b, CallParams::default()))
    }

    fn reply(s: &str) -> String {
        format!("Feedback Reasoning:\nbecause\nRevised Summary:\n{s}")
    }

    #[test]
    fn kind_names_round_trip() {
        for k in PipelineKind::all() {
            assert_eq!(k.to_string().parse::<PipelineKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(serde_json::from_str::<PipelineKind>(&json).unwrap(), k);
        }
        assert!("p5".parse::<PipelineKind>().is_err());
    }

    #[test]
    fn p1_single_dimension_prompt() {
        let f = Fixture::new();
        let (b, m) = scripted(["Feedback Reasoning: x\nRevised Summary: Better."]);
        let r = run_p1(f.input(), Dimension::Faithfulness, &m).unwrap();
        assert_eq!(r.revised.text(), "Better.");
        assert_eq!(r.reasoning.as_deref(), Some("x"));
        let prompt = b.requests()[0].last_user().to_string();
        assert!(prompt.contains(prompts::receptive_instruction(Dimension::Faithfulness)));
        assert!(!prompt.contains(prompts::receptive_instruction(Dimension::Completeness)));
        assert!(prompt.contains("***Faithfulness Feedback***"));
        assert!(!prompt.contains("***Conciseness Feedback***"));
    }

    #[test]
    fn p2_chains_fresh_sessions() {
        let f = Fixture::new();
        let (b, m) = scripted([reply("A.").as_str(), reply("B.").as_str(), reply("C.").as_str()]);
        let r = run_p2(f.input(), Dimension::ALL, &m, LabelMode::Stale).unwrap();
        assert_eq!(r.per_turn.as_deref().unwrap(), ["A.", "B.", "C."]);
        assert_eq!(r.revised.text(), "C.");
        assert_eq!(r.sessions(), 3);
        let reqs = b.requests();
        assert!(reqs.iter().all(|q| q.messages.len() == 1));
        assert!(reqs[1].last_user().contains("Summary:\nA.\n"));
        // turn 2 uses stale labels fitted to the one-sentence summary
        assert!(reqs[1].last_user().contains("***Completeness Feedback***"));
        assert!(reqs[2].last_user().contains("do not contain key content:\n- None"));
    }

    #[test]
    fn p3_keeps_history() {
        let f = Fixture::new();
        let (b, m) = scripted([reply("A.").as_str(), reply("B.").as_str(), reply("C.").as_str()]);
        let r = run_p3(f.input(), Dimension::ALL, &m, LabelMode::Stale).unwrap();
        assert_eq!(r.transcript.len(), 6);
        assert_eq!(r.sessions(), 1);
        let reqs = b.requests();
        assert_eq!(reqs[2].messages.len(), 5);
        assert_eq!(reqs[2].messages[..4], reqs[1].messages[..]
            .iter()
            .cloned()
            .chain([ChatMessage::assistant(reply("B."))])
            .collect::<Vec<_>>()[..]);
        assert!(reqs[1].last_user().starts_with("Refine your refined summary again"));
        assert!(reqs.iter().all(|q| q.messages[0].role == Role::User));
    }

    #[test]
    fn p4_orders_instructions_and_blocks() {
        use Dimension::*;
        let f = Fixture::new();
        let order = [Completeness, Conciseness, Faithfulness];
        let (b, m) = scripted([reply("Done.").as_str()]);
        let r = run_p4(f.input(), order, &m).unwrap();
        assert_eq!(r.order_used, order);
        let p = b.requests()[0].last_user().to_string();
        let pos = |s: &str| p.find(s).unwrap();
        assert!(pos("- Completeness: reason") < pos("- Conciseness: reason"));
        assert!(pos("- Conciseness: reason") < pos("- Faithfulness: reason"));
        assert!(pos("***Completeness Feedback***") < pos("***Conciseness Feedback***"));
        assert!(pos("***Conciseness Feedback***") < pos("***Faithfulness Feedback***"));
    }

    #[test]
    fn refeed_uses_system_prompt_and_tags() {
        let f = Fixture::new();
        let (b, m) = scripted([r"<think>r</think><answer>**Final Revised Summary:** \[\boxed{\text{S.}}\]</answer>"]);
        let r = run_refeed(f.input(), Dimension::ALL, &m).unwrap();
        assert_eq!((r.reasoning.as_deref(), r.revised.text().as_str()), (Some("r"), "S."));
        let req = &b.requests()[0];
        assert_eq!(req.messages[0].role, Role::System);
        assert!(req.messages[0].content.starts_with("Your role as an assistant"));
        assert!(!req.last_user().contains("Ideal Summary"));
    }

    #[test]
    fn dcr_calls_per_flagged_sentence() {
        let f = Fixture::new();
        let (b, m) = scripted(["The error span: one", "The error span: three", "Revised Summary: Fixed."]);
        let r = run_dcr(f.input(), &m, &m).unwrap();
        let reqs = b.requests();
        assert_eq!(reqs.len(), 3);
        assert!(reqs[0].last_user().contains("Summary of the above document:\nS one."));
        assert!(reqs[2].last_user().contains("The error span: one\n\nThe error span: three"));
        assert_eq!(r.revised.text(), "Fixed.");

        let mut clean = Fixture::new();
        clean.labels = FeedbackLabels::clean(3, 2);
        let (b, m) = scripted(["Revised Summary: Same."]);
        run_dcr(clean.input(), &m, &m).unwrap();
        assert_eq!(b.requests().len(), 1);
        assert!(b.requests()[0].last_user().ends_with("Feedback:\nNo issues found."));
    }

    #[test]
    fn acueval_feedback_lists_facts() {
        let fb = acueval_feedback(&["a".into(), "b".into(), "c".into()]);
        assert_eq!(fb.lines().filter(|l| l.starts_with("- ")).count(), 3);
        assert!(fb.starts_with("The summary is not consistent with the source text."));
        assert_eq!(acueval_feedback(&[]), prompts::ACUEVAL_CONSISTENT);
    }

    #[test]
    fn extraction_failures_carry_raw() {
        let f = Fixture::new();
        let (_, m) = scripted(["no marker"]);
        let e = run_p4(f.input(), Dimension::ALL, &m).unwrap_err();
        assert_eq!(e.raw(), Some("no marker"));
    }
}
