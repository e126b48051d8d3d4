//! Prompt templates, embedded from `assets/prompts/`.
//!
//! Placeholders use `{name}` and are filled with [`crate::template::render`].

pub const FACT_CHECK: &str = include_str!("../assets/prompts/fact_check.txt");
pub const KEYFACT_EXTRACTION: &str = include_str!("../assets/prompts/keyfact_extraction.txt");
pub const KEYFACT_ALIGNMENT: &str = include_str!("../assets/prompts/keyfact_alignment.txt");
pub const SUMMARY_GENERATION: &str = include_str!("../assets/prompts/summary_generation.txt");

/// P1, P2, P4 and the first turn of P3.
pub const REFINE_REASON: &str = include_str!("../assets/prompts/refine_reason.txt");
/// Later turns of P3.
pub const REFINE_FOLLOWUP: &str = include_str!("../assets/prompts/refine_followup.txt");
/// Refinement without a reasoning section (DCR stage 2 and ACUEval).
pub const REFINE_ONLY: &str = include_str!("../assets/prompts/refine_only.txt");
pub const DCR_REASON: &str = include_str!("../assets/prompts/dcr_reason.txt");
pub const ACUEVAL_DETECT: &str = include_str!("../assets/prompts/acueval_detect.txt");
pub const ACUEVAL_FEEDBACK: &str = include_str!("../assets/prompts/acueval_feedback.txt");
pub const ACUEVAL_CONSISTENT: &str = "The summary is consistent with the source text.";
pub const DCR_NO_ISSUES: &str = "No issues found.";

pub const REFEED_SYSTEM: &str = include_str!("../assets/prompts/refeed_system.txt");
pub const REFEED_USER: &str = include_str!("../assets/prompts/refeed_user.txt");
/// Teacher prompt for reflective reasoning data.
pub const REFLECTIVE_GENERATION: &str = include_str!("../assets/prompts/reflective_generation.txt");
/// Teacher prompt for receptive reasoning data.
pub const RECEPTIVE_GENERATION: &str = include_str!("../assets/prompts/receptive_generation.txt");
/// User prompt of receptive training records.
pub const RECEPTIVE_USER: &str = include_str!("../assets/prompts/receptive_user.txt");

use crate::model::Dimension;

/// Per-dimension line of the `{Instruction}` slot in receptive prompts.
pub fn receptive_instruction(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Faithfulness => {
            "- Faithfulness: reason about factual inconsistencies in the summary sentence."
        }
        Dimension::Completeness => {
            "- Completeness: reason about why the summary is each missing key content."
        }
        Dimension::Conciseness => {
            "- Conciseness: reason about why the summary does not contain key content and contains unnecessary details."
        }
    }
}

/// Per-dimension feedback-quality criterion used by reflective prompts.
pub fn reflective_instruction(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Faithfulness => {
            "- Faithfulness: Does this feedback accurately identify summary sentences?"
        }
        Dimension::Completeness => {
            "- Completeness: Does this feedback correctly identify missing key content in the summary?"
        }
        Dimension::Conciseness => {
            "- Conciseness: Does the feedback correctly identify sentences that include unnecessary details and lack key content?"
        }
    }
}

/// Reflective criterion for the teacher prompt. Faithfulness carries the
/// four factual error types; the inference prompt omits them.
pub fn reflective_teacher_instruction(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Faithfulness => concat!(
            "- Faithfulness: Does this feedback accurately identify summary sentences?\n",
            "* Out-of-article Error: Facts, new information or subjective opinions not found or verifiable by the document.\n",
            "* Entity Error: Incorrect or misreferenced details about key entities such as names, dates, locations, numbers, pronouns, and events in the summary.\n",
            "* Relation Error: Misrepresented relationships, such as incorrect use of verbs, prepositions, and adjectives.\n",
            "* Sentence Error: the entire sentence entirely contradicts the information in the document."
        ),
        other => reflective_instruction(other),
    }
}

/// Joins the instruction lines for `dims` in the given order.
pub fn instruction_block(dims: &[Dimension], line: fn(Dimension) -> &'static str) -> String {
    dims.iter().map(|d| line(*d)).collect::<Vec<_>>().join("\n")
}
