//! A deterministic offline stand-in for a chat model.
//!
//! It recognises each harness prompt by its opening text and answers with
//! simple lexical heuristics: a sentence is "supported" when every word of
//! four or more letters also occurs in the document, key facts are aligned
//! by word overlap, and refinement drops flagged sentences and appends
//! missing key content. The answers are crude but well-formed, so every
//! pipeline, the evaluator and the dataset builder can run end to end
//! without a network.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use serde_json::json;

use super::tokens::count_tokens;
use super::{BackendError, BackendStats, ChatBackend, ChatRequest, ChatResponse, Role};
use crate::pipeline::parse::{extract_boxed, parse_revised_summary};
use crate::segment::segment_sentences;

#[derive(Debug, Default)]
pub struct SimulatedBackend {
    calls: AtomicU64,
}

impl SimulatedBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ChatBackend for SimulatedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let content = respond(request)?;
        let prompt_tokens = request.messages.iter().map(|m| count_tokens(&m.content) as u64).sum();
        Ok(ChatResponse {
            prompt_tokens,
            completion_tokens: count_tokens(&content) as u64,
            ..ChatResponse::text(content)
        })
    }

    fn stats(&self) -> BackendStats {
        let calls = self.calls.load(Ordering::Relaxed);
        BackendStats {
            calls,
            cache_hits: 0,
            attempts: calls,
        }
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn content_words(text: &str) -> BTreeSet<String> {
    words(text).into_iter().filter(|w| w.chars().count() >= 4).collect()
}

fn unsupported_words(sentence: &str, doc_words: &BTreeSet<String>) -> Vec<String> {
    words(sentence)
        .into_iter()
        .filter(|w| w.chars().count() >= 4 && !doc_words.contains(w))
        .collect()
}

fn supported(sentence: &str, doc_words: &BTreeSet<String>) -> bool {
    unsupported_words(sentence, doc_words).is_empty()
}

/// Text between `start` and the earliest following `end` marker.
fn between<'a>(text: &'a str, start: &str, ends: &[&str]) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    let to = ends.iter().filter_map(|e| rest.find(e)).min().unwrap_or(rest.len());
    Some(rest[..to].trim())
}

fn after_last<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.rfind(marker).map(|p| text[p + marker.len()..].trim())
}

fn unknown(what: &str) -> BackendError {
    BackendError::Other(format!("simulated backend cannot answer {what}"))
}

fn respond(request: &ChatRequest) -> Result<String, BackendError> {
    let user = request.last_user();
    let has_system = request.messages.iter().any(|m| m.role == Role::System);
    if user.starts_with("You will receive a document followed by a corresponding summary.") {
        fact_check(user)
    } else if user.starts_with("You will be provided with a transcript.") {
        extract(user)
    } else if user.starts_with("You will receive a summary and a set of key facts") {
        align(user)
    } else if user.starts_with("You will receive a document and a summary of it.") {
        detect(user)
    } else if user.starts_with("Text:") && user.contains("Summarize the Text.") {
        summarize(user)
    } else if user.starts_with("I summarized the following document:") {
        critique(user)
    } else if user.starts_with("Refine your refined summary again") {
        followup(request)
    } else if user.contains("**Final Reviesed Summary**") {
        teacher(user)
    } else if user.starts_with("Your goal is to deliberate") && has_system {
        let revision = revise(user, true)?;
        Ok(format!(
            "<think>\n{}\n</think>\n<answer>\n**Final Revised Summary:** \\[ \\boxed{{\\text{{{}}}}} \\]\n</answer>",
            revision.reasoning, revision.summary
        ))
    } else if user.starts_with("Your task is to reason about the provided feedback") {
        let revision = revise(user, false)?;
        Ok(format!(
            "Feedback Reasoning:\n{}\nRevised Summary:\n{}",
            revision.reasoning, revision.summary
        ))
    } else if user.starts_with("Your task is to refine the summary") {
        Ok(format!("Revised Summary:\n{}", revise(user, false)?.summary))
    } else {
        Err(unknown("an unrecognised prompt"))
    }
}

fn fact_check(prompt: &str) -> Result<String, BackendError> {
    let doc = between(prompt, "\nDocument:\n", &["\n\nSummary with "]).ok_or_else(|| unknown("fact check"))?;
    let sentences = between(prompt, " sentences:\n", &["\n\nJSON Output:"]).ok_or_else(|| unknown("fact check"))?;
    let doc_words = content_words(doc);
    let items: Vec<_> = sentences
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|s| {
            let missing = unsupported_words(s, &doc_words);
            if missing.is_empty() {
                json!({"sentence": s, "reason": "Every statement is found in the document.", "category": "no error"})
            } else {
                json!({
                    "sentence": s,
                    "reason": format!("The document does not mention {}.", missing.join(", ")),
                    "category": "out-of-context error"
                })
            }
        })
        .collect();
    Ok(serde_json::to_string(&items).expect("json"))
}

fn extract(prompt: &str) -> Result<String, BackendError> {
    let text = after_last(prompt, "Summary:\n").ok_or_else(|| unknown("key-fact extraction"))?;
    let text = text.strip_suffix("JSON Output:").unwrap_or(text).trim();
    let facts: Vec<String> = segment_sentences(text)
        .into_iter()
        .map(|s| s.trim_end_matches(['.', '!', '?']).to_string())
        .take(16)
        .collect();
    Ok(json!({ "key facts": facts }).to_string())
}

fn overlap(fact: &str, sentence: &str) -> f64 {
    let f = content_words(fact);
    if f.is_empty() {
        return 0.0;
    }
    let s = content_words(sentence);
    f.intersection(&s).count() as f64 / f.len() as f64
}

fn align(prompt: &str) -> Result<String, BackendError> {
    let summary = between(prompt, "Summary:\n", &["\n\n"]).ok_or_else(|| unknown("alignment"))?;
    let facts = between(prompt, " key facts:\n", &["\n\nJSON Output:"]).ok_or_else(|| unknown("alignment"))?;
    let sentences: Vec<(usize, &str)> = summary
        .lines()
        .filter_map(|l| {
            let rest = l.strip_prefix('[')?;
            let (n, s) = rest.split_once("] ")?;
            Some((n.parse().ok()?, s))
        })
        .collect();
    let items: Vec<_> = facts
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|fact| {
            let lines: Vec<usize> = sentences
                .iter()
                .filter(|(_, s)| overlap(fact, s) >= 0.5)
                .map(|(n, _)| *n)
                .collect();
            let response = if lines.is_empty() { "No" } else { "Yes" };
            json!({"key fact": fact, "response": response, "line number": lines})
        })
        .collect();
    Ok(serde_json::to_string(&items).expect("json"))
}

fn detect(prompt: &str) -> Result<String, BackendError> {
    let doc = between(prompt, "\nDocument:\n", &["\n\nSummary:\n"]).ok_or_else(|| unknown("detection"))?;
    let summary = between(prompt, "\n\nSummary:\n", &["\n\nJSON Output:"]).ok_or_else(|| unknown("detection"))?;
    let doc_words = content_words(doc);
    let facts: Vec<String> = segment_sentences(summary)
        .into_iter()
        .filter(|s| !supported(s, &doc_words))
        .collect();
    Ok(json!({ "unsupported facts": facts }).to_string())
}

fn summarize(prompt: &str) -> Result<String, BackendError> {
    let text = between(prompt, "Text:", &["\n\nInstruction: Summarize the Text."]).ok_or_else(|| unknown("summarization"))?;
    let summary = segment_sentences(text).into_iter().take(3).collect::<Vec<_>>().join(" ");
    Ok(json!({ "summary": summary }).to_string())
}

fn critique(prompt: &str) -> Result<String, BackendError> {
    let doc = between(prompt, "I summarized the following document:\n", &["\nSummary of the above document:\n"])
        .ok_or_else(|| unknown("critique"))?;
    let sentence = between(prompt, "\nSummary of the above document:\n", &["\n\nReason about"]).ok_or_else(|| unknown("critique"))?;
    let missing = unsupported_words(sentence, &content_words(doc));
    Ok(if missing.is_empty() {
        format!("The sentence appears to be supported by the document. The error span: {sentence} Suggested fix: keep the sentence as it is.")
    } else {
        format!(
            "The document does not substantiate {}. The error span: {} Suggested fix: remove the sentence from the summary.",
            missing.join(", "),
            sentence
        )
    })
}

struct Revision {
    reasoning: String,
    summary: String,
}

/// Sections of a refinement prompt.
struct RefinePrompt<'a> {
    document: &'a str,
    summary: &'a str,
    feedback: &'a str,
}

fn refine_sections(prompt: &str) -> Option<RefinePrompt<'_>> {
    let summary_at = prompt.rfind("\n\nSummary:\n")?;
    let doc_from = prompt[..summary_at].rfind("Document:\n")? + "Document:\n".len();
    let feedback_at = prompt.rfind("\n\nFeedback:\n")?;
    if feedback_at < summary_at {
        return None;
    }
    let summary_end = prompt[summary_at..feedback_at]
        .find("\n\nIdeal Summary:\n")
        .map_or(feedback_at, |p| summary_at + p);
    Some(RefinePrompt {
        document: prompt[doc_from..summary_at].trim(),
        summary: prompt[summary_at + "\n\nSummary:\n".len()..summary_end].trim(),
        feedback: prompt[feedback_at + "\n\nFeedback:\n".len()..].trim(),
    })
}

#[derive(Default)]
struct Flags {
    drop_faith: Vec<String>,
    drop_conc: Vec<String>,
    add: Vec<String>,
    spans: Vec<String>,
    facts: Vec<String>,
}

fn read_feedback(feedback: &str) -> Flags {
    let mut flags = Flags::default();
    let mut in_conciseness = false;
    for line in feedback.lines().map(str::trim) {
        if line.starts_with("***") {
            in_conciseness = line.contains("Conciseness");
            continue;
        }
        let bullet = |prefix: &str| {
            line.strip_prefix(prefix)
                .and_then(|r| r.split_once(": "))
                .map(|(_, t)| t.trim().to_string())
        };
        if let Some(t) = bullet("- Sentence ") {
            if in_conciseness {
                flags.drop_conc.push(t);
            } else {
                flags.drop_faith.push(t);
            }
        } else if let Some(t) = bullet("- Missing key content ") {
            flags.add.push(t);
        } else if let Some(span) = line.split("The error span: ").nth(1) {
            if line.contains("remove the sentence") {
                flags.spans.push(span.split(" Suggested fix:").next().unwrap_or(span).trim().to_string());
            }
        } else if let Some(fact) = line.strip_prefix("- ") {
            if line != "- None" {
                flags.facts.push(fact.to_string());
            }
        }
    }
    flags
}

fn revise_text(document: &str, summary: &str, feedback: &str, reflective: bool) -> Revision {
    let doc_words = content_words(document);
    let flags = read_feedback(feedback);
    let mut notes = Vec::new();
    let mut kept = Vec::new();
    for s in segment_sentences(summary) {
        let faith = flags.drop_faith.iter().any(|f| *f == s);
        let conc = flags.drop_conc.iter().any(|f| *f == s);
        let span = flags.spans.iter().any(|f| s.contains(f.as_str()));
        let fact = flags.facts.iter().any(|f| overlap(f, &s) >= 0.5);
        let unsupported = !supported(&s, &doc_words);
        if faith && reflective && !unsupported {
            notes.push(format!("The faithfulness feedback on \"{s}\" is not valid: the document supports it."));
            kept.push(s);
        } else if faith || conc || span || fact {
            notes.push(format!("Remove \"{s}\" as the feedback indicates."));
        } else {
            kept.push(s);
        }
    }
    for fact in &flags.add {
        let mut sentence = fact.trim().to_string();
        if !sentence.ends_with(['.', '!', '?']) {
            sentence.push('.');
        }
        notes.push(format!("Add the missing key content \"{sentence}\"."));
        kept.push(sentence);
    }
    if kept.is_empty() {
        kept = segment_sentences(summary).into_iter().take(1).collect();
        notes.push("Keep the first sentence so the summary is not empty.".into());
    }
    if notes.is_empty() {
        notes.push("The feedback raises no issue, so the summary stays as it is.".into());
    }
    Revision {
        reasoning: notes.join("\n\n"),
        summary: kept.join(" "),
    }
}

fn revise(prompt: &str, reflective: bool) -> Result<Revision, BackendError> {
    let p = refine_sections(prompt).ok_or_else(|| unknown("refinement"))?;
    Ok(revise_text(p.document, p.summary, p.feedback, reflective))
}

fn followup(request: &ChatRequest) -> Result<String, BackendError> {
    let first = request
        .messages
        .iter()
        .find(|m| m.role == Role::User)
        .ok_or_else(|| unknown("follow-up"))?;
    let document = refine_sections(&first.content).ok_or_else(|| unknown("follow-up"))?.document;
    let previous = request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == Role::Assistant)
        .and_then(|m| parse_revised_summary(&m.content).ok())
        .ok_or_else(|| unknown("follow-up without a previous revision"))?;
    let feedback = after_last(request.last_user(), "Feedback:\n").unwrap_or_default();
    let r = revise_text(document, &previous, feedback, false);
    Ok(format!("Feedback Reasoning:\n{}\nRevised Summary:\n{}", r.reasoning, r.summary))
}

fn teacher(prompt: &str) -> Result<String, BackendError> {
    let reflective = prompt.starts_with("Your goal is to deliberate");
    let p = refine_sections(prompt).ok_or_else(|| unknown("reasoning generation"))?;
    let mut r = revise_text(p.document, p.summary, p.feedback, reflective);
    if reflective {
        if let Some(ideal) = between(prompt, "\n\nIdeal Summary:\n", &["\n\nFeedback:\n"]) {
            r.reasoning = format!(
                "An ideal summary keeps only supported statements and covers the key content, as in: {ideal}\n\n{}",
                r.reasoning
            );
        }
    }
    Ok(format!(
        "{}\n\n**Final Reviesed Summary**:\n\\[ \\boxed{{\\text{{{}}}}} \\]",
        r.reasoning, r.summary
    ))
}

/// Boxed text of a teacher reply, for callers that only need the summary.
pub fn boxed_summary(reply: &str) -> Option<String> {
    extract_boxed(reply)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CallParams, ChatMessage};
    use crate::pipeline::parse::parse_refeed_output;

    fn ask(prompt: &str) -> String {
        let r = ChatRequest::new("sim", vec![ChatMessage::user(prompt)], &CallParams::default());
        SimulatedBackend::new().complete(&r).unwrap().content
    }

    #[test]
    fn fact_check_flags_unsupported_sentences() {
        let prompt = crate::template::render(
            crate::prompts::FACT_CHECK,
            &[
                ("document", "The cat sat on the warm mat."),
                ("num_sentences", "2"),
                ("summary", "The cat sat on the mat.\nThe zebra danced."),
            ],
        );
        let v: serde_json::Value = serde_json::from_str(&ask(&prompt)).unwrap();
        assert_eq!(v[0]["category"], "no error");
        assert_eq!(v[1]["category"], "out-of-context error");
    }

    #[test]
    fn refinement_drops_flagged_and_adds_missing() {
        let prompt = format!(
            "Your task is to refine the summary based on the provided feedback.\n\nDocument:\nD.\n\nSummary:\nA one. B two.\n\nFeedback:\n{}",
            "***Faithfulness Feedback***\nThese summary sentences are factually inconsistent with the Document:\n- Sentence 2: B two.\n\n***Completeness Feedback***\nThese key contents are missing in the summary:\n- Missing key content 1: C three"
        );
        assert_eq!(ask(&prompt), "Revised Summary:\nA one. C three.");
    }

    #[test]
    fn unknown_prompts_error() {
        let r = ChatRequest::new("sim", vec![ChatMessage::user("hello")], &CallParams::default());
        assert!(SimulatedBackend::new().complete(&r).is_err());
    }

    #[test]
    fn refeed_reply_parses() {
        let prompt = "Your goal is to deliberate on the provided feedback.\n\nDocument:\nA one.\n\nSummary:\nA one.\n\nFeedback:\n***Faithfulness Feedback***\nThese summary sentences are factually inconsistent with the Document:\n- Sentence 1: A one.";
        let r = ChatRequest::new(
            "sim",
            vec![ChatMessage::system("sys"), ChatMessage::user(prompt)],
            &CallParams::default(),
        );
        let out = SimulatedBackend::new().complete(&r).unwrap().content;
        let (reasoning, revised) = parse_refeed_output(&out).unwrap();
        // reflective: the flagged sentence is supported, so it stays
        assert_eq!(revised, "A one.");
        assert!(reasoning.contains("not valid"));
    }
}
