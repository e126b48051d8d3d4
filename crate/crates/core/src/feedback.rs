//! Binary labels to textual feedback, and dimension-order policies.
//!
//! A rendered block looks like
//!
//! ```text
//! ***Faithfulness Feedback***
//! These summary sentences are factually inconsistent with the Document:
//! - Sentence 7: The fee was set in 1888.
//! ```
//!
//! Sentence bullets use the 1-based sentence index, key-fact bullets the
//! 1-based key-fact index. A block with nothing flagged has a single
//! `- None` bullet. Blocks are joined by a blank line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{scores_from_labels, AlignmentEdge, EvalError, FactCheckVerdict};
use crate::model::{Dimension, DimensionScores, KeyFactSet, SummaryRecord};

pub const NONE_LINE: &str = "- None";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeedbackError {
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{dimension} label at position {index} is {value}, expected 0 or 1")]
    NotBinary {
        dimension: Dimension,
        index: usize,
        value: u8,
    },
    #[error("feedback line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid order policy {0:?}")]
    BadPolicy(String),
}

/// Three binary vectors; 1 marks an item that needs revision.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeedbackLabels {
    pub faith: Vec<u8>,
    pub comp: Vec<u8>,
    pub conc: Vec<u8>,
}

impl FeedbackLabels {
    pub fn new(faith: Vec<u8>, comp: Vec<u8>, conc: Vec<u8>) -> Result<Self, FeedbackError> {
        let labels = Self { faith, comp, conc };
        for dim in Dimension::ALL {
            if let Some((index, &value)) = labels.get(dim).iter().enumerate().find(|(_, &v)| v > 1) {
                return Err(FeedbackError::NotBinary {
                    dimension: dim,
                    index: index + 1,
                    value,
                });
            }
        }
        if labels.faith.len() != labels.conc.len() {
            return Err(FeedbackError::LengthMismatch {
                what: "conciseness labels",
                expected: labels.faith.len(),
                got: labels.conc.len(),
            });
        }
        Ok(labels)
    }

    /// All-zero labels for a summary of `n` sentences and `m` key facts.
    pub fn clean(n: usize, m: usize) -> Self {
        Self {
            faith: vec![0; n],
            comp: vec![0; m],
            conc: vec![0; n],
        }
    }

    pub fn get(&self, dim: Dimension) -> &[u8] {
        match dim {
            Dimension::Faithfulness => &self.faith,
            Dimension::Completeness => &self.comp,
            Dimension::Conciseness => &self.conc,
        }
    }

    pub fn n(&self) -> usize {
        self.faith.len()
    }

    pub fn m(&self) -> usize {
        self.comp.len()
    }

    /// 1-based indices flagged in `dim`.
    pub fn flagged(&self, dim: Dimension) -> BTreeSet<usize> {
        self.get(dim)
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 1)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn is_clean(&self) -> bool {
        Dimension::ALL.iter().all(|d| self.get(*d).iter().all(|&l| l == 0))
    }

    pub fn check_lengths(&self, n: usize, m: usize) -> Result<(), FeedbackError> {
        for (what, got, expected) in [
            ("faithfulness labels", self.faith.len(), n),
            ("completeness labels", self.comp.len(), m),
            ("conciseness labels", self.conc.len(), n),
        ] {
            if got != expected {
                return Err(FeedbackError::LengthMismatch { what, expected, got });
            }
        }
        Ok(())
    }

    /// Scores implied by the labels: one minus the flagged fraction.
    pub fn scores(&self) -> Result<DimensionScores, EvalError> {
        scores_from_labels(&self.faith, &self.comp, &self.conc)
    }

    /// Resizes to `n` sentences and `m` key facts, truncating or padding
    /// with zeros.
    pub fn fit(&self, n: usize, m: usize) -> Self {
        let fit = |v: &[u8], len: usize| {
            let mut out: Vec<u8> = v.iter().copied().take(len).collect();
            out.resize(len, 0);
            out
        };
        Self {
            faith: fit(&self.faith, n),
            comp: fit(&self.comp, m),
            conc: fit(&self.conc, n),
        }
    }
}

pub fn labels_from_eval(
    verdicts: &[FactCheckVerdict],
    edges: &[AlignmentEdge],
    n: usize,
    m: usize,
) -> Result<FeedbackLabels, FeedbackError> {
    if verdicts.len() != n {
        return Err(FeedbackError::LengthMismatch {
            what: "verdicts",
            expected: n,
            got: verdicts.len(),
        });
    }
    if edges.len() != m {
        return Err(FeedbackError::LengthMismatch {
            what: "alignment edges",
            expected: m,
            got: edges.len(),
        });
    }
    let faith = verdicts.iter().map(|v| v.category.label()).collect();
    let comp = edges.iter().map(|e| u8::from(!e.matched)).collect();
    let cited: BTreeSet<usize> = edges.iter().flat_map(|e| e.line_numbers.iter().copied()).collect();
    let conc = (1..=n).map(|i| u8::from(!cited.contains(&i))).collect();
    Ok(FeedbackLabels { faith, comp, conc })
}

fn intro(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Faithfulness => "These summary sentences are factually inconsistent with the Document:",
        Dimension::Completeness => "These key contents are missing in the summary:",
        Dimension::Conciseness => "These summary sentences do not contain key content:",
    }
}

fn header(dim: Dimension) -> String {
    format!("***{} Feedback***", dim.title())
}

fn item_label(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Completeness => "Missing key content",
        _ => "Sentence",
    }
}

fn one_line(text: &str) -> String {
    text.replace("\r\n", " ").replace(['\n', '\r'], " ")
}

/// Renders the block for one dimension.
pub fn render_block(dim: Dimension, labels: &FeedbackLabels, summary: &SummaryRecord, keyfacts: &KeyFactSet) -> String {
    let mut out = format!("{}\n{}", header(dim), intro(dim));
    let flagged = labels.flagged(dim);
    if flagged.is_empty() {
        out.push('\n');
        out.push_str(NONE_LINE);
    }
    for i in flagged {
        let text = match dim {
            Dimension::Completeness => keyfacts.fact(i),
            _ => summary.sentence(i),
        }
        .unwrap_or_default();
        out.push_str(&format!("\n- {} {i}: {}", item_label(dim), one_line(text)));
    }
    out
}

/// Rendered feedback: one block per dimension in `order`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackText {
    pub order: [Dimension; 3],
    pub blocks: Vec<String>,
}

impl FeedbackText {
    pub fn text(&self) -> String {
        self.blocks.join("\n\n")
    }

    pub fn block(&self, dim: Dimension) -> &str {
        let pos = self.order.iter().position(|d| *d == dim).expect("order is a permutation");
        &self.blocks[pos]
    }
}

impl fmt::Display for FeedbackText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

pub fn render_feedback(
    labels: &FeedbackLabels,
    summary: &SummaryRecord,
    keyfacts: &KeyFactSet,
    order: [Dimension; 3],
) -> FeedbackText {
    FeedbackText {
        order,
        blocks: order
            .iter()
            .map(|d| render_block(*d, labels, summary, keyfacts))
            .collect(),
    }
}

/// What a parser recovers from rendered feedback.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedFeedback {
    pub order: Vec<Dimension>,
    pub flagged: BTreeMap<Dimension, BTreeSet<usize>>,
}

/// Recovers the block order and the flagged index sets.
pub fn parse_feedback(text: &str) -> Result<ParsedFeedback, FeedbackError> {
    let mut parsed = ParsedFeedback::default();
    let mut current: Option<Dimension> = None;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        let err = |message: String| FeedbackError::Parse { line: lineno, message };
        if line.is_empty() {
            continue;
        }
        if let Some(title) = line.strip_prefix("***").and_then(|l| l.strip_suffix(" Feedback***")) {
            let dim = Dimension::from_str(title).map_err(|_| err(format!("unknown dimension {title:?}")))?;
            if parsed.flagged.contains_key(&dim) {
                return Err(err(format!("duplicate {dim} block")));
            }
            parsed.order.push(dim);
            parsed.flagged.insert(dim, BTreeSet::new());
            current = Some(dim);
            continue;
        }
        let dim = current.ok_or_else(|| err("text before the first block header".into()))?;
        if line == intro(dim) || line == NONE_LINE {
            continue;
        }
        let rest = line
            .strip_prefix("- ")
            .and_then(|l| l.strip_prefix(item_label(dim)))
            .ok_or_else(|| err(format!("unexpected line {line:?}")))?;
        let index: usize = rest
            .trim_start()
            .split(':')
            .next()
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| err(format!("missing index in {line:?}")))?;
        parsed.flagged.get_mut(&dim).expect("block exists").insert(index);
    }
    Ok(parsed)
}

pub type Order = [Dimension; 3];

/// The six permutations of the three dimensions, in lexicographic order.
pub fn all_orders() -> [Order; 6] {
    use Dimension::*;
    [
        [Faithfulness, Completeness, Conciseness],
        [Faithfulness, Conciseness, Completeness],
        [Completeness, Faithfulness, Conciseness],
        [Completeness, Conciseness, Faithfulness],
        [Conciseness, Faithfulness, Completeness],
        [Conciseness, Completeness, Faithfulness],
    ]
}

pub fn is_permutation(order: &[Dimension]) -> bool {
    order.len() == 3 && Dimension::ALL.iter().all(|d| order.contains(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrderPolicy {
    Fixed { order: Order },
    RandomPerSample { seed: u64 },
    LastFixed { last: Dimension, seed: u64 },
}

impl Default for OrderPolicy {
    fn default() -> Self {
        OrderPolicy::Fixed { order: Dimension::ALL }
    }
}

fn sample_rng(seed: u64, sample_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample_index);
    rng
}

/// Order for sample `sample_index`; a pure function of policy and index.
pub fn choose_order(policy: &OrderPolicy, sample_index: u64) -> Order {
    match *policy {
        OrderPolicy::Fixed { order } => order,
        OrderPolicy::RandomPerSample { seed } => {
            all_orders()[sample_rng(seed, sample_index).random_range(0..6)]
        }
        OrderPolicy::LastFixed { last, seed } => {
            let candidates: Vec<Order> = all_orders().into_iter().filter(|o| o[2] == last).collect();
            candidates[sample_rng(seed, sample_index).random_range(0..candidates.len())]
        }
    }
}

impl OrderPolicy {
    /// Short name used in file names and reports, e.g. `random` or `last-conc`.
    pub fn label(&self) -> String {
        match self {
            OrderPolicy::Fixed { order } if *order == Dimension::ALL => "fixed".into(),
            OrderPolicy::Fixed { order } => format!(
                "fixed-{}",
                order.iter().map(|d| short_key(*d)).collect::<Vec<_>>().join("-")
            ),
            OrderPolicy::RandomPerSample { .. } => "random".into(),
            OrderPolicy::LastFixed { last, .. } => format!("last-{}", short_key(*last)),
        }
    }
}

fn short_key(d: Dimension) -> &'static str {
    match d {
        Dimension::Faithfulness => "faith",
        Dimension::Completeness => "comp",
        Dimension::Conciseness => "conc",
    }
}

impl fmt::Display for OrderPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderPolicy::Fixed { order } => write!(
                f,
                "fixed:{}",
                order.iter().map(|d| short_key(*d)).collect::<Vec<_>>().join(",")
            ),
            OrderPolicy::RandomPerSample { seed } => write!(f, "random:{seed}"),
            OrderPolicy::LastFixed { last, seed } => write!(f, "last:{}:{seed}", short_key(*last)),
        }
    }
}

/// Parses `fixed`, `fixed:faith,comp,conc`, `random:SEED` or
/// `last:DIM:SEED`. A missing seed means 0.
impl FromStr for OrderPolicy {
    type Err = FeedbackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FeedbackError::BadPolicy(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let seed = |p: Option<&&str>| -> Result<u64, FeedbackError> {
            p.map_or(Ok(0), |x| x.trim().parse().map_err(|_| bad()))
        };
        match parts[0].trim().to_lowercase().as_str() {
            "fixed" => match parts.get(1) {
                None => Ok(OrderPolicy::default()),
                Some(list) => {
                    let dims = list
                        .split(',')
                        .map(|d| Dimension::from_str(d.trim()).map_err(|_| bad()))
                        .collect::<Result<Vec<_>, _>>()?;
                    if !is_permutation(&dims) {
                        return Err(bad());
                    }
                    Ok(OrderPolicy::Fixed {
                        order: [dims[0], dims[1], dims[2]],
                    })
                }
            },
            "random" => Ok(OrderPolicy::RandomPerSample { seed: seed(parts.get(1))? }),
            "last" => {
                let last = parts
                    .get(1)
                    .and_then(|d| Dimension::from_str(d.trim()).ok())
                    .ok_or_else(bad)?;
                Ok(OrderPolicy::LastFixed {
                    last,
                    seed: seed(parts.get(2))?,
                })
            }
            _ => Err(bad()),
        }
    }
}
