//! Domain data model shared by every other module.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Upper bound on the number of key facts per document.
pub const MAX_KEY_FACTS: usize = 16;

/// Exact score value. Every score derived from labels is a ratio of two
/// small counts, so it is kept as one.
pub type Fraction = num_rational::Ratio<u64>;

pub fn fraction_to_f64(f: Fraction) -> f64 {
    *f.numer() as f64 / *f.denom() as f64
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("document id must not be empty")]
    EmptyDocumentId,
    #[error("document {0} has empty text")]
    EmptyDocumentText(String),
    #[error("summary for {0} has no sentences")]
    NoSentences(String),
    #[error("summary for {doc_id} has an empty sentence at position {index}")]
    EmptySentence { doc_id: String, index: usize },
    #[error("key fact set for {doc_id} has {count} facts, limit is {MAX_KEY_FACTS}")]
    TooManyKeyFacts { doc_id: String, count: usize },
    #[error("key fact set for {0} contains an empty fact")]
    EmptyKeyFact(String),
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentFormat {
    Dialogue,
    NonDialogue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub domain: String,
    pub format: DocumentFormat,
    pub text: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        domain: impl Into<String>,
        format: DocumentFormat,
        text: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let doc = Self {
            id: id.into(),
            domain: domain.into(),
            format,
            text: text.into(),
            extra: BTreeMap::new(),
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(ModelError::EmptyDocumentId);
        }
        if self.text.trim().is_empty() {
            return Err(ModelError::EmptyDocumentText(self.id.clone()));
        }
        Ok(())
    }
}

/// A summary of one document, held as its ordered sentence list.
///
/// Sentences are addressed 1-based everywhere outside this struct: sentence
/// `i` of the evaluator, the feedback renderer and the pipelines is
/// `sentences[i - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub doc_id: String,
    #[serde(rename = "summarizer")]
    pub summarizer_id: String,
    pub sentences: Vec<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl SummaryRecord {
    pub fn new(
        doc_id: impl Into<String>,
        summarizer_id: impl Into<String>,
        sentences: Vec<String>,
    ) -> Result<Self, ModelError> {
        let rec = Self {
            doc_id: doc_id.into(),
            summarizer_id: summarizer_id.into(),
            sentences,
            extra: BTreeMap::new(),
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Builds a record by segmenting free text.
    pub fn from_text(
        doc_id: impl Into<String>,
        summarizer_id: impl Into<String>,
        text: &str,
    ) -> Result<Self, ModelError> {
        Self::new(doc_id, summarizer_id, crate::segment::segment_sentences(text))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.sentences.is_empty() {
            return Err(ModelError::NoSentences(self.doc_id.clone()));
        }
        if let Some(index) = self.sentences.iter().position(|s| s.trim().is_empty()) {
            return Err(ModelError::EmptySentence {
                doc_id: self.doc_id.clone(),
                index: index + 1,
            });
        }
        Ok(())
    }

    /// Number of sentences, `N`.
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// 1-based sentence lookup.
    pub fn sentence(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.sentences.get(i))
            .map(String::as_str)
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    /// Stable identifier of the record within a corpus.
    pub fn record_id(&self) -> String {
        format!("{}/{}", self.doc_id, self.summarizer_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFactSet {
    pub doc_id: String,
    pub facts: Vec<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl KeyFactSet {
    pub fn new(doc_id: impl Into<String>, facts: Vec<String>) -> Result<Self, ModelError> {
        let set = Self {
            doc_id: doc_id.into(),
            facts,
            extra: BTreeMap::new(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.facts.len() > MAX_KEY_FACTS {
            return Err(ModelError::TooManyKeyFacts {
                doc_id: self.doc_id.clone(),
                count: self.facts.len(),
            });
        }
        if self.facts.iter().any(|f| f.trim().is_empty()) {
            return Err(ModelError::EmptyKeyFact(self.doc_id.clone()));
        }
        Ok(())
    }

    /// Number of key facts, `M`.
    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn fact(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.facts.get(i))
            .map(String::as_str)
    }
}

/// The three quality dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Faithfulness,
    Completeness,
    Conciseness,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::Faithfulness,
        Dimension::Completeness,
        Dimension::Conciseness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Faithfulness => "faithfulness",
            Dimension::Completeness => "completeness",
            Dimension::Conciseness => "conciseness",
        }
    }

    /// Capitalised name used in prompts and headers.
    pub fn title(self) -> &'static str {
        match self {
            Dimension::Faithfulness => "Faithfulness",
            Dimension::Completeness => "Completeness",
            Dimension::Conciseness => "Conciseness",
        }
    }

    /// Short column label used in report tables.
    pub fn short(self) -> &'static str {
        match self {
            Dimension::Faithfulness => "Faith.",
            Dimension::Completeness => "Comp.",
            Dimension::Conciseness => "Conc.",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown dimension {0:?} (expected faithfulness, completeness or conciseness)")]
pub struct UnknownDimension(pub String);

impl FromStr for Dimension {
    type Err = UnknownDimension;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "faithfulness" | "faith" | "fa" | "f" => Ok(Dimension::Faithfulness),
            "completeness" | "comp" | "cm" | "c" => Ok(Dimension::Completeness),
            "conciseness" | "conc" | "cons" | "cn" => Ok(Dimension::Conciseness),
            _ => Err(UnknownDimension(s.to_string())),
        }
    }
}

/// Faithfulness, completeness and conciseness of one summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimensionScores {
    pub faithfulness: Fraction,
    pub completeness: Fraction,
    pub conciseness: Fraction,
}

impl DimensionScores {
    pub fn new(
        faithfulness: Fraction,
        completeness: Fraction,
        conciseness: Fraction,
    ) -> Result<Self, ModelError> {
        for f in [faithfulness, completeness, conciseness] {
            if f > Fraction::from_integer(1) {
                return Err(ModelError::ScoreOutOfRange(f.to_string()));
            }
        }
        Ok(Self {
            faithfulness,
            completeness,
            conciseness,
        })
    }

    pub fn perfect() -> Self {
        let one = Fraction::from_integer(1);
        Self {
            faithfulness: one,
            completeness: one,
            conciseness: one,
        }
    }

    pub fn get(&self, dim: Dimension) -> Fraction {
        match dim {
            Dimension::Faithfulness => self.faithfulness,
            Dimension::Completeness => self.completeness,
            Dimension::Conciseness => self.conciseness,
        }
    }

    /// Mean of the three scores, exact.
    pub fn composite(&self) -> Fraction {
        (self.faithfulness + self.completeness + self.conciseness) / 3
    }

    pub fn as_f64(&self) -> [f64; 3] {
        Dimension::ALL.map(|d| fraction_to_f64(self.get(d)))
    }
}
