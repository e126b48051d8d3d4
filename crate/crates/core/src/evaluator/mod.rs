//! FineSurE-style evaluation.
//!
//! Three model tasks (fact checking, key-fact extraction and key-fact
//! alignment) produce verdicts and alignment edges, from which the three
//! dimension scores follow by counting:
//!
//! * faithfulness = |S_fact| / N
//! * completeness = |matched key facts| / M
//! * conciseness = |sentences cited by some key fact| / N

pub mod scores;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{BackendError, ModelHandle};
use crate::json_repair::{repair_and_parse_json, JsonRepairError, Shape};
use crate::model::{Document, DimensionScores, KeyFactSet, SummaryRecord, MAX_KEY_FACTS};
use crate::prompts;
use crate::template::render;

pub use scores::{
    composite, s_fact, score_alignment, score_faithfulness, score_from_labels, scores_from_labels,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    FactCheck,
    KeyFactExtraction,
    KeyFactAlignment,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::FactCheck => "fact check",
            Task::KeyFactExtraction => "key-fact extraction",
            Task::KeyFactAlignment => "key-fact alignment",
        })
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{task}: unparseable output: {source}")]
    Parse {
        task: Task,
        #[source]
        source: JsonRepairError,
    },
    #[error("{task}: {message}")]
    Schema {
        task: Task,
        message: String,
        raw: String,
    },
    #[error("{task}: expected {expected} item(s), model returned {got}")]
    Cardinality {
        task: Task,
        expected: usize,
        got: usize,
        raw: String,
    },
    #[error("key-fact extraction returned no key facts")]
    NoKeyFacts { raw: String },
    #[error("{0}: input text is empty")]
    EmptyInput(Task),
    #[error("score undefined: {0}")]
    Undefined(&'static str),
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

impl EvalError {
    /// Raw model output behind a parse failure, kept for auditing.
    pub fn raw(&self) -> Option<&str> {
        match self {
            EvalError::Parse { source, .. } => Some(source.raw()),
            EvalError::Schema { raw, .. }
            | EvalError::Cardinality { raw, .. }
            | EvalError::NoKeyFacts { raw } => Some(raw),
            _ => None,
        }
    }
}

/// The nine fact-check categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    NoError,
    OutOfContext,
    Entity,
    Predicate,
    Circumstantial,
    Grammatical,
    Coreference,
    Linking,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 9] = [
        ErrorCategory::NoError,
        ErrorCategory::OutOfContext,
        ErrorCategory::Entity,
        ErrorCategory::Predicate,
        ErrorCategory::Circumstantial,
        ErrorCategory::Grammatical,
        ErrorCategory::Coreference,
        ErrorCategory::Linking,
        ErrorCategory::Other,
    ];

    pub fn is_consistent(self) -> bool {
        self == ErrorCategory::NoError
    }

    /// Binary faithfulness label: 1 for any error category.
    pub fn label(self) -> u8 {
        u8::from(!self.is_consistent())
    }

    /// The category as written in the fact-check prompt.
    pub fn prompt_name(self) -> &'static str {
        match self {
            ErrorCategory::NoError => "no error",
            ErrorCategory::OutOfContext => "out-of-context error",
            ErrorCategory::Entity => "entity error",
            ErrorCategory::Predicate => "predicate error",
            ErrorCategory::Circumstantial => "circumstantial error",
            ErrorCategory::Grammatical => "grammatical error",
            ErrorCategory::Coreference => "coreference error",
            ErrorCategory::Linking => "linking error",
            ErrorCategory::Other => "other error",
        }
    }

    /// Lenient parse of a model-written category. Unrecognised names fall
    /// back to [`ErrorCategory::Other`], which still counts as an error.
    pub fn parse_lenient(raw: &str) -> ErrorCategory {
        let norm = normalize_category(raw);
        match norm.as_str() {
            "no" | "none" | "correct" => ErrorCategory::NoError,
            "out of context" | "out of article" | "outofcontext" => ErrorCategory::OutOfContext,
            "entity" => ErrorCategory::Entity,
            "predicate" | "relation" => ErrorCategory::Predicate,
            "circumstantial" | "circumstance" => ErrorCategory::Circumstantial,
            "grammatical" | "grammar" => ErrorCategory::Grammatical,
            "coreference" => ErrorCategory::Coreference,
            "linking" | "link" => ErrorCategory::Linking,
            _ => ErrorCategory::Other,
        }
    }
}

fn normalize_category(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase().replace(['_', '-'], " ");
    let words: Vec<&str> = lowered.split_whitespace().collect();
    let joined = words.join(" ");
    joined
        .strip_suffix(" error")
        .or_else(|| joined.strip_suffix(" errors"))
        .unwrap_or(&joined)
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactCheckVerdict {
    pub sentence_index: usize,
    pub reason: String,
    pub category: ErrorCategory,
}

/// Edge set of key fact `keyfact_index` in the fact/sentence bipartite graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentEdge {
    pub keyfact_index: usize,
    pub matched: bool,
    pub line_numbers: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCheckOutput {
    pub verdicts: Vec<FactCheckVerdict>,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFactExtraction {
    pub keyfacts: KeyFactSet,
    pub warnings: Vec<String>,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOutput {
    pub edges: Vec<AlignmentEdge>,
    pub warnings: Vec<String>,
    pub raw: String,
}

/// Full evaluation of one summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub verdicts: Vec<FactCheckVerdict>,
    pub edges: Vec<AlignmentEdge>,
    pub scores: DimensionScores,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub raw_fact_check: String,
    #[serde(default)]
    pub raw_alignment: String,
}

impl Evaluation {
    /// Builds an evaluation from already-parsed verdicts and edges.
    pub fn from_parts(
        verdicts: Vec<FactCheckVerdict>,
        edges: Vec<AlignmentEdge>,
        n: usize,
        m: usize,
    ) -> Result<Self, EvalError> {
        let faithfulness = score_faithfulness(&verdicts, n)?;
        let (completeness, conciseness) = score_alignment(&edges, m, n)?;
        Ok(Self {
            verdicts,
            edges,
            scores: DimensionScores {
                faithfulness,
                completeness,
                conciseness,
            },
            warnings: Vec::new(),
            raw_fact_check: String::new(),
            raw_alignment: String::new(),
        })
    }

    pub fn labels(&self, n: usize, m: usize) -> Result<crate::feedback::FeedbackLabels, crate::feedback::FeedbackError> {
        crate::feedback::labels_from_eval(&self.verdicts, &self.edges, n, m)
    }
}

pub fn fact_check_prompt(document: &Document, summary: &SummaryRecord) -> String {
    render(
        prompts::FACT_CHECK,
        &[
            ("document", &document.text),
            ("num_sentences", &summary.len().to_string()),
            ("summary", &summary.sentences.join("\n")),
        ],
    )
}

pub fn extraction_prompt(text: &str) -> String {
    render(prompts::KEYFACT_EXTRACTION, &[("summary", text)])
}

pub fn alignment_prompt(summary: &SummaryRecord, keyfacts: &KeyFactSet) -> String {
    let numbered: Vec<String> = summary
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| format!("[{}] {}", i + 1, s))
        .collect();
    render(
        prompts::KEYFACT_ALIGNMENT,
        &[
            ("summary", &numbered.join("\n")),
            ("num_key_facts", &keyfacts.len().to_string()),
            ("key_facts", &keyfacts.facts.join("\n")),
        ],
    )
}

/// Parses a fact-check reply into exactly `n` verdicts.
pub fn parse_fact_check(
    raw: &str,
    n: usize,
    aliases: &BTreeMap<String, ErrorCategory>,
) -> Result<Vec<FactCheckVerdict>, EvalError> {
    let task = Task::FactCheck;
    let value = repair_and_parse_json(raw, Shape::Array).map_err(|source| EvalError::Parse { task, source })?;
    let items = value.as_array().cloned().unwrap_or_default();
    if items.len() != n {
        return Err(EvalError::Cardinality {
            task,
            expected: n,
            got: items.len(),
            raw: raw.to_string(),
        });
    }
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let category = item
                .get("category")
                .and_then(Value::as_str)
                .ok_or_else(|| EvalError::Schema {
                    task,
                    message: format!("item {} has no \"category\" string", i + 1),
                    raw: raw.to_string(),
                })?;
            let category = aliases
                .get(&normalize_category(category))
                .copied()
                .unwrap_or_else(|| ErrorCategory::parse_lenient(category));
            Ok(FactCheckVerdict {
                sentence_index: i + 1,
                reason: item
                    .get("reason")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
                category,
            })
        })
        .collect()
}

/// Parses an extraction reply: dedupes, drops blanks and caps at 16.
pub fn parse_key_facts(doc_id: &str, raw: &str) -> Result<KeyFactExtraction, EvalError> {
    let task = Task::KeyFactExtraction;
    let value = repair_and_parse_json(raw, Shape::Any).map_err(|source| EvalError::Parse { task, source })?;
    let list = match &value {
        Value::Array(a) => Some(a),
        Value::Object(o) => ["key facts", "key_facts", "keyfacts", "key facts list"]
            .iter()
            .find_map(|k| o.get(*k))
            .and_then(Value::as_array),
        _ => None,
    }
    .ok_or_else(|| EvalError::Schema {
        task,
        message: "expected a \"key facts\" list".into(),
        raw: raw.to_string(),
    })?;

    let mut warnings = Vec::new();
    let mut facts: Vec<String> = Vec::new();
    for item in list {
        let Some(fact) = item.as_str().map(str::trim) else {
            warnings.push(format!("ignored non-string key fact {item}"));
            continue;
        };
        if fact.is_empty() {
            warnings.push("ignored empty key fact".into());
        } else if facts.iter().any(|f| f == fact) {
            warnings.push(format!("dropped duplicate key fact {fact:?}"));
        } else {
            facts.push(fact.to_string());
        }
    }
    if facts.is_empty() {
        return Err(EvalError::NoKeyFacts { raw: raw.to_string() });
    }
    if facts.len() > MAX_KEY_FACTS {
        warnings.push(format!(
            "extraction returned {} key facts, truncated to {MAX_KEY_FACTS}",
            facts.len()
        ));
        facts.truncate(MAX_KEY_FACTS);
    }
    for w in &warnings {
        log::warn!("{doc_id}: {w}");
    }
    let keyfacts = KeyFactSet::new(doc_id, facts).expect("facts are non-empty and capped");
    Ok(KeyFactExtraction {
        keyfacts,
        warnings,
        raw: raw.to_string(),
    })
}

/// Parses an alignment reply into exactly `m` edges. Out-of-range line
/// numbers are dropped with a warning.
pub fn parse_alignment(raw: &str, m: usize, n: usize) -> Result<AlignmentOutput, EvalError> {
    let task = Task::KeyFactAlignment;
    let value = repair_and_parse_json(raw, Shape::Array).map_err(|source| EvalError::Parse { task, source })?;
    let items = value.as_array().cloned().unwrap_or_default();
    if items.len() != m {
        return Err(EvalError::Cardinality {
            task,
            expected: m,
            got: items.len(),
            raw: raw.to_string(),
        });
    }
    let mut warnings = Vec::new();
    let mut edges = Vec::with_capacity(m);
    for (j, item) in items.iter().enumerate() {
        let response = item
            .get("response")
            .and_then(Value::as_str)
            .ok_or_else(|| EvalError::Schema {
                task,
                message: format!("item {} has no \"response\" string", j + 1),
                raw: raw.to_string(),
            })?;
        let matched = response.trim().to_lowercase().starts_with("yes");
        let mut line_numbers = BTreeSet::new();
        if matched {
            for line in line_values(item.get("line number").or_else(|| item.get("line_number"))) {
                match line {
                    Some(l) if (1..=n).contains(&l) => {
                        line_numbers.insert(l);
                    }
                    _ => warnings.push(format!(
                        "key fact {}: dropped line number {} outside [1, {n}]",
                        j + 1,
                        line.map_or("?".to_string(), |l| l.to_string())
                    )),
                }
            }
        }
        edges.push(AlignmentEdge {
            keyfact_index: j + 1,
            matched,
            line_numbers,
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(AlignmentOutput {
        edges,
        warnings,
        raw: raw.to_string(),
    })
}

fn line_values(v: Option<&Value>) -> Vec<Option<usize>> {
    let one = |v: &Value| -> Option<usize> {
        match v {
            Value::Number(n) => n.as_u64().map(|x| x as usize),
            Value::String(s) => s.trim().trim_matches(['[', ']']).trim().parse().ok(),
            _ => None,
        }
    };
    match v {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a.iter().map(one).collect(),
        Some(other) => vec![one(other)],
    }
}

/// Evaluator bound to one model.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub model: ModelHandle,
    /// Extra category names, normalised, mapped onto the nine categories.
    pub category_aliases: BTreeMap<String, ErrorCategory>,
}

impl Evaluator {
    pub fn new(model: ModelHandle) -> Self {
        Self {
            model,
            category_aliases: BTreeMap::new(),
        }
    }

    pub fn with_category_aliases(mut self, aliases: BTreeMap<String, ErrorCategory>) -> Self {
        self.category_aliases = aliases
            .into_iter()
            .map(|(k, v)| (normalize_category(&k), v))
            .collect();
        self
    }

    pub fn fact_check(&self, document: &Document, summary: &SummaryRecord) -> Result<FactCheckOutput, EvalError> {
        if summary.is_empty() {
            return Err(EvalError::EmptyInput(Task::FactCheck));
        }
        let raw = self.model.ask(fact_check_prompt(document, summary))?;
        let verdicts = parse_fact_check(&raw, summary.len(), &self.category_aliases)?;
        Ok(FactCheckOutput { verdicts, raw })
    }

    /// Decomposes `text` into key facts. Callers pick which text (document
    /// or reference summary) is decomposed.
    pub fn extract_key_facts(&self, doc_id: &str, text: &str) -> Result<KeyFactExtraction, EvalError> {
        if text.trim().is_empty() {
            return Err(EvalError::EmptyInput(Task::KeyFactExtraction));
        }
        let raw = self.model.ask(extraction_prompt(text))?;
        parse_key_facts(doc_id, &raw)
    }

    pub fn align_key_facts(&self, summary: &SummaryRecord, keyfacts: &KeyFactSet) -> Result<AlignmentOutput, EvalError> {
        if keyfacts.is_empty() {
            return Err(EvalError::Undefined("alignment with M = 0"));
        }
        let raw = self.model.ask(alignment_prompt(summary, keyfacts))?;
        parse_alignment(&raw, keyfacts.len(), summary.len())
    }

    /// Fact check followed by alignment, then scoring.
    pub fn evaluate(
        &self,
        document: &Document,
        summary: &SummaryRecord,
        keyfacts: &KeyFactSet,
    ) -> Result<Evaluation, EvalError> {
        let fc = self.fact_check(document, summary)?;
        let al = self.align_key_facts(summary, keyfacts)?;
        let mut eval = Evaluation::from_parts(fc.verdicts, al.edges, summary.len(), keyfacts.len())?;
        eval.warnings = al.warnings;
        eval.raw_fact_check = fc.raw;
        eval.raw_alignment = al.raw;
        Ok(eval)
    }
}
