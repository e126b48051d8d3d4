//! Dimension scores from verdicts, alignment edges or binary labels.

use std::collections::BTreeSet;

use super::{AlignmentEdge, EvalError, FactCheckVerdict};
use crate::model::{DimensionScores, Fraction};

/// Indices (1-based) of sentences judged factually correct.
pub fn s_fact(verdicts: &[FactCheckVerdict]) -> BTreeSet<usize> {
    verdicts
        .iter()
        .filter(|v| v.category.is_consistent())
        .map(|v| v.sentence_index)
        .collect()
}

/// `|S_fact| / N`.
pub fn score_faithfulness(verdicts: &[FactCheckVerdict], n: usize) -> Result<Fraction, EvalError> {
    if n == 0 {
        return Err(EvalError::Undefined("faithfulness with N = 0"));
    }
    if verdicts.len() != n {
        return Err(EvalError::LengthMismatch {
            what: "verdicts",
            expected: n,
            got: verdicts.len(),
        });
    }
    Ok(Fraction::new(s_fact(verdicts).len() as u64, n as u64))
}

/// `(|matched facts| / M, |cited sentences| / N)`.
pub fn score_alignment(
    edges: &[AlignmentEdge],
    m: usize,
    n: usize,
) -> Result<(Fraction, Fraction), EvalError> {
    if m == 0 {
        return Err(EvalError::Undefined("completeness with M = 0"));
    }
    if n == 0 {
        return Err(EvalError::Undefined("conciseness with N = 0"));
    }
    if edges.len() != m {
        return Err(EvalError::LengthMismatch {
            what: "alignment edges",
            expected: m,
            got: edges.len(),
        });
    }
    let matched = edges.iter().filter(|e| e.matched).count();
    let cited: BTreeSet<usize> = edges
        .iter()
        .flat_map(|e| e.line_numbers.iter().copied())
        .filter(|&i| (1..=n).contains(&i))
        .collect();
    Ok((
        Fraction::new(matched as u64, m as u64),
        Fraction::new(cited.len() as u64, n as u64),
    ))
}

/// `1 - mean(labels)`, where a label of 1 marks a flagged item.
pub fn score_from_labels(labels: &[u8]) -> Result<Fraction, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Undefined("score of an empty label vector"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(EvalError::Undefined("labels must be 0 or 1"));
    }
    let ok = labels.iter().filter(|&&l| l == 0).count();
    Ok(Fraction::new(ok as u64, labels.len() as u64))
}

pub fn scores_from_labels(faith: &[u8], comp: &[u8], conc: &[u8]) -> Result<DimensionScores, EvalError> {
    Ok(DimensionScores {
        faithfulness: score_from_labels(faith)?,
        completeness: score_from_labels(comp)?,
        conciseness: score_from_labels(conc)?,
    })
}

/// Mean of the three dimension scores.
pub fn composite(scores: &DimensionScores) -> Fraction {
    scores.composite()
}
