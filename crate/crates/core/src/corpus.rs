//! Line-delimited JSON corpus and result files.
//!
//! Every line is one object with a `kind` tag. Input corpora hold
//! `document`, `summary` and `keyfacts` lines; result files hold the
//! [`OutputRecord`] kinds. Unknown fields on input lines are kept so a corpus
//! survives a load/save round trip.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::evaluator::Evaluation;
use crate::feedback::FeedbackLabels;
use crate::model::{Document, DimensionScores, KeyFactSet, ModelError, SummaryRecord};
use crate::pipeline::RefinementResult;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ModelError,
    },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateDocument { line: usize, id: String },
    #[error("line {line}: duplicate summary {record_id:?}")]
    DuplicateSummary { line: usize, record_id: String },
    #[error("line {line}: duplicate key facts for {doc_id:?}")]
    DuplicateKeyFacts { line: usize, doc_id: String },
    #[error("line {line}: {kind} refers to unknown document {doc_id:?}")]
    UnknownDocument { line: usize, kind: &'static str, doc_id: String },
    #[error("corpus has no documents")]
    Empty,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Deserialize)]
struct RawSummary {
    doc_id: String,
    summarizer: String,
    #[serde(default)]
    sentences: Option<Vec<String>>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

impl RawSummary {
    /// Sentences win over `text`; `text` alone is segmented and kept as an
    /// extra field.
    fn into_record(self) -> Result<SummaryRecord, ModelError> {
        let sentences = match self.sentences {
            Some(s) => s,
            None => match self.extra.get("text").and_then(Value::as_str) {
                Some(text) => crate::segment::segment_sentences(text),
                None => Vec::new(),
            },
        };
        let rec = SummaryRecord {
            doc_id: self.doc_id,
            summarizer_id: self.summarizer,
            sentences,
            extra: self.extra,
        };
        rec.validate()?;
        Ok(rec)
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum InputLine {
    Document(Document),
    Summary(RawSummary),
    Keyfacts(KeyFactSet),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OutputLine<'a> {
    Document(&'a Document),
    Summary(&'a SummaryRecord),
    Keyfacts(&'a KeyFactSet),
}

/// A document with its summaries and optional reference key facts.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub document: Document,
    pub summaries: Vec<SummaryRecord>,
    pub keyfacts: Option<KeyFactSet>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&CorpusEntry> {
        self.entries.iter().find(|e| e.document.id == doc_id)
    }

    /// `(entry, summary)` pairs in file order.
    pub fn records(&self) -> impl Iterator<Item = (&CorpusEntry, &SummaryRecord)> {
        self.entries
            .iter()
            .flat_map(|e| e.summaries.iter().map(move |s| (e, s)))
    }

    pub fn summary_count(&self) -> usize {
        self.entries.iter().map(|e| e.summaries.len()).sum()
    }

    /// Documents first, then each document's key facts and summaries.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            push_line(&mut out, &OutputLine::Document(&e.document));
            if let Some(k) = &e.keyfacts {
                push_line(&mut out, &OutputLine::Keyfacts(k));
            }
            for s in &e.summaries {
                push_line(&mut out, &OutputLine::Summary(s));
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(io_err(path))
    }
}

fn push_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("corpus lines serialize"));
    out.push('\n');
}

/// Parses corpus text. Line numbers in errors are 1-based; blank lines are
/// skipped. Documents keep their first-appearance order; summaries and key
/// facts may appear before or after their document.
pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    let mut entries: Vec<CorpusEntry> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut pending_summaries: Vec<(usize, SummaryRecord)> = Vec::new();
    let mut pending_keyfacts: Vec<(usize, KeyFactSet)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: InputLine = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        match parsed {
            InputLine::Document(doc) => {
                doc.validate().map_err(|source| CorpusError::Invalid { line, source })?;
                if index.contains_key(&doc.id) {
                    return Err(CorpusError::DuplicateDocument { line, id: doc.id });
                }
                index.insert(doc.id.clone(), entries.len());
                entries.push(CorpusEntry {
                    document: doc,
                    summaries: Vec::new(),
                    keyfacts: None,
                });
            }
            InputLine::Summary(s) => {
                let rec = s.into_record().map_err(|source| CorpusError::Invalid { line, source })?;
                pending_summaries.push((line, rec));
            }
            InputLine::Keyfacts(k) => {
                k.validate().map_err(|source| CorpusError::Invalid { line, source })?;
                pending_keyfacts.push((line, k));
            }
        }
    }
    if entries.is_empty() {
        return Err(CorpusError::Empty);
    }

    for (line, k) in pending_keyfacts {
        let Some(&at) = index.get(&k.doc_id) else {
            return Err(CorpusError::UnknownDocument {
                line,
                kind: "keyfacts",
                doc_id: k.doc_id,
            });
        };
        if entries[at].keyfacts.is_some() {
            return Err(CorpusError::DuplicateKeyFacts { line, doc_id: k.doc_id });
        }
        entries[at].keyfacts = Some(k);
    }
    for (line, s) in pending_summaries {
        let Some(&at) = index.get(&s.doc_id) else {
            return Err(CorpusError::UnknownDocument {
                line,
                kind: "summary",
                doc_id: s.doc_id,
            });
        };
        let entry = &mut entries[at];
        if entry.summaries.iter().any(|x| x.summarizer_id == s.summarizer_id) {
            return Err(CorpusError::DuplicateSummary {
                line,
                record_id: s.record_id(),
            });
        }
        entry.summaries.push(s);
    }
    Ok(Corpus { entries })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_corpus(&text)
}

/// Labels and scores for one summary, as written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub record_id: String,
    pub doc_id: String,
    pub summarizer: String,
    pub labels: FeedbackLabels,
    pub scores: DimensionScores,
    #[serde(default)]
    pub keyfacts: Option<KeyFactSet>,
    #[serde(default)]
    pub evaluation: Option<Evaluation>,
}

/// One refined summary, as written by `refine`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub record_id: String,
    pub doc_id: String,
    pub summarizer: String,
    pub policy: String,
    pub labels: FeedbackLabels,
    pub result: RefinementResult,
}

/// A record that could not be processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub record_id: String,
    pub stage: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputRecord {
    Labels(LabelRecord),
    Refinement(RefinementRecord),
    Outcome(crate::experiment::OutcomeRecord),
    Failure(FailureRecord),
}

impl OutputRecord {
    pub fn record_id(&self) -> &str {
        match self {
            OutputRecord::Labels(r) => &r.record_id,
            OutputRecord::Refinement(r) => &r.record_id,
            OutputRecord::Outcome(r) => &r.record_id,
            OutputRecord::Failure(r) => &r.record_id,
        }
    }
}

/// Appends one JSON line per record, creating the file if needed.
pub fn save_results<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| CorpusError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Replaces `path` with the given records.
pub fn write_results<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    File::create(path).map_err(io_err(path))?;
    save_results(path, records)
}

pub fn load_results<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_text = line.map_err(io_err(path))?;
        if line_text.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line_text).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r##"{"kind":"document","id":"d1","domain":"news","format":"non_dialogue","text":"A cat sat. It purred.","source":"x"}
{"kind":"summary","doc_id":"d1","summarizer":"m1","text":"A cat sat. It was happy."}
{"kind":"keyfacts","doc_id":"d1","facts":["A cat sat."]}

{"kind":"summary","doc_id":"d2","summarizer":"m1","sentences":["Rain fell."]}
{"kind":"document","id":"d2","format":"dialogue","text":"#Person1#: rain?"}
"##;

    #[test]
    fn loads_and_groups() {
        let c = parse_corpus(SAMPLE).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.entries[0].summaries[0].sentences, vec!["A cat sat.", "It was happy."]);
        assert_eq!(c.entries[0].document.extra["source"], "x");
        assert_eq!(c.entries[0].keyfacts.as_ref().unwrap().facts.len(), 1);
        assert_eq!(c.entries[1].summaries.len(), 1);
        assert!(c.entries[1].keyfacts.is_none());
        assert_eq!(c.records().count(), 2);
    }

    #[test]
    fn round_trips() {
        let c = parse_corpus(SAMPLE).unwrap();
        let again = parse_corpus(&c.to_jsonl()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn errors_name_lines() {
        let dup = "{\"kind\":\"document\",\"id\":\"a\",\"format\":\"dialogue\",\"text\":\"t\"}\n{\"kind\":\"document\",\"id\":\"a\",\"format\":\"dialogue\",\"text\":\"t\"}";
        assert!(matches!(parse_corpus(dup), Err(CorpusError::DuplicateDocument { line: 2, .. })));
        let orphan = "{\"kind\":\"document\",\"id\":\"a\",\"format\":\"dialogue\",\"text\":\"t\"}\n{\"kind\":\"summary\",\"doc_id\":\"zz\",\"summarizer\":\"m\",\"sentences\":[\"x\"]}";
        assert!(matches!(parse_corpus(orphan), Err(CorpusError::UnknownDocument { line: 2, .. })));
        assert!(matches!(parse_corpus("{oops"), Err(CorpusError::Parse { line: 1, .. })));
        let empty_text = "{\"kind\":\"document\",\"id\":\"a\",\"format\":\"dialogue\",\"text\":\" \"}";
        assert!(matches!(parse_corpus(empty_text), Err(CorpusError::Invalid { line: 1, .. })));
        assert!(matches!(parse_corpus("\n"), Err(CorpusError::Empty)));
    }

    #[test]
    fn results_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        let f = |id: &str| {
            OutputRecord::Failure(FailureRecord {
                record_id: id.into(),
                stage: "refine".into(),
                message: "bad".into(),
                pipeline: None,
                raw: None,
            })
        };
        save_results(&path, &[f("a")]).unwrap();
        save_results(&path, &[f("b")]).unwrap();
        let back: Vec<OutputRecord> = load_results(&path).unwrap();
        assert_eq!(back, vec![f("a"), f("b")]);
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("{\"kind\":\"failure\""));
        write_results(&path, &[f("c")]).unwrap();
        assert_eq!(load_results::<OutputRecord>(&path).unwrap().len(), 1);
    }
}
