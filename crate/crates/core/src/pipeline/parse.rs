//! Extraction of revised summaries and reasoning from model replies.

use thiserror::Error;

pub const REVISED_MARKER: &str = "Revised Summary:";
pub const REASONING_MARKER: &str = "Feedback Reasoning:";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no revised summary found in model output")]
pub struct ExtractError {
    pub raw: String,
}

fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn clean(text: &str) -> String {
    let t = text.trim().trim_start_matches("**").trim();
    let t = t.trim_end_matches("```").trim();
    // a model that echoes the template bracket literally
    let t = if t.starts_with('[') && t.ends_with(']') && !t[1..t.len() - 1].contains(['[', ']']) {
        t[1..t.len() - 1].trim()
    } else {
        t
    };
    t.to_string()
}

/// Text after the last `Revised Summary:` marker. Falls back to a boxed
/// expression when the marker is absent.
pub fn parse_revised_summary(raw: &str) -> Result<String, ExtractError> {
    let text = strip_fences(raw);
    let found = match text.rfind(REVISED_MARKER) {
        Some(pos) => Some(clean(&text[pos + REVISED_MARKER.len()..])),
        None => extract_boxed(&text),
    };
    match found {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(ExtractError { raw: raw.to_string() }),
    }
}

/// The `Feedback Reasoning:` section, if present.
pub fn parse_reasoning(raw: &str) -> Option<String> {
    let text = strip_fences(raw);
    let start = text.find(REASONING_MARKER)? + REASONING_MARKER.len();
    let end = text.rfind(REVISED_MARKER).filter(|&e| e >= start).unwrap_or(text.len());
    let r = clean(&text[start..end]);
    (!r.is_empty()).then_some(r)
}

/// Index one past the brace that closes the `{` at `open`, skipping
/// backslash-escaped braces.
fn balanced_end(s: &str, open: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut i = open;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => {
                i += 2;
                continue;
            }
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

/// If `s` is exactly `\cmd{...}`, the braced content.
fn unwrap_command<'a>(s: &'a str, cmd: &str) -> Option<&'a str> {
    let s = s.trim();
    let rest = s.strip_prefix(cmd)?;
    let open = s.len() - rest.len();
    if !rest.starts_with('{') {
        return None;
    }
    let end = balanced_end(s, open)?;
    (end == s.len()).then(|| &s[open + 1..end - 1])
}

/// Content of the last `\boxed{...}` in `text`, with an inner `\text{...}`
/// unwrapped.
pub fn extract_boxed(text: &str) -> Option<String> {
    let mut search_end = text.len();
    while let Some(pos) = text[..search_end].rfind("\\boxed{") {
        let open = pos + "\\boxed".len();
        if let Some(end) = balanced_end(text, open) {
            let inner = &text[open + 1..end - 1];
            let inner = unwrap_command(inner, "\\text").unwrap_or(inner);
            return Some(inner.trim().to_string());
        }
        search_end = pos;
    }
    None
}

fn span<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    match (text.find(open), text.find(close)) {
        (Some(o), Some(c)) if c >= o + open.len() => Some(&text[o + open.len()..c]),
        (Some(o), None) => Some(&text[o + open.len()..]),
        // closing tag only: the opening tag was part of the prompt
        (None, Some(c)) => Some(&text[..c]),
        _ => None,
    }
}

/// `(reasoning, revised)` from a think/answer reply.
pub fn parse_refeed_output(raw: &str) -> Result<(String, String), ExtractError> {
    let reasoning = span(raw, "<think>", "</think>").map(str::trim).unwrap_or_default().to_string();
    let answer = if raw.contains("<answer>") {
        span(raw, "<answer>", "</answer>")
    } else {
        None
    };
    let revised = match answer {
        Some(a) => extract_boxed(a).or_else(|| {
            let a = a.trim();
            let a = a
                .rsplit_once("Summary:**")
                .or_else(|| a.rsplit_once("Summary**:"))
                .or_else(|| a.rsplit_once("Summary:"))
                .map_or(a, |(_, rest)| rest);
            Some(clean(a))
        }),
        None => extract_boxed(raw),
    };
    match revised {
        Some(r) if !r.is_empty() => Ok((reasoning, r)),
        _ => Err(ExtractError { raw: raw.to_string() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn marker_extraction() {
        assert_eq!(parse_revised_summary("Feedback Reasoning: x\nRevised Summary: Better.").unwrap(), "Better.");
        assert_eq!(parse_revised_summary("blah\nRevised Summary:\nX Y Z").unwrap(), "X Y Z");
        let echoed = "Revised Summary:\n[Your revised summary]\n```\nFeedback Reasoning: r\nRevised Summary: Final.";
        assert_eq!(parse_revised_summary(echoed).unwrap(), "Final.");
        assert_eq!(parse_revised_summary("```\nFeedback Reasoning: r\nRevised Summary:\nIn fence.\n```").unwrap(), "In fence.");
        assert_eq!(parse_revised_summary("**Revised Summary:** Bold.").unwrap(), "Bold.");
        assert!(parse_revised_summary("nothing useful").is_err());
        assert!(parse_revised_summary("Revised Summary:   ").is_err());
        assert_eq!(parse_reasoning("Feedback Reasoning:\nwhy\nRevised Summary:\nS.").as_deref(), Some("why"));
    }

    #[test]
    fn boxed_extraction() {
        assert_eq!(extract_boxed(r"\[ \boxed{\text{S.}} \]").as_deref(), Some("S."));
        assert_eq!(extract_boxed(r"\boxed{a {b} c}").as_deref(), Some("a {b} c"));
        assert_eq!(extract_boxed(r"\boxed{a \} b}").as_deref(), Some(r"a \} b"));
        assert_eq!(extract_boxed(r"\boxed{\text{x} and y}").as_deref(), Some(r"\text{x} and y"));
        assert_eq!(extract_boxed(r"\boxed{unclosed"), None);
        assert_eq!(extract_boxed(r"\boxed{one} then \boxed{two}").as_deref(), Some("two"));
    }

    #[test]
    fn refeed_output() {
        let raw = r"<think>r</think><answer>**Final Revised Summary:** \[\boxed{\text{S.}}\]</answer>";
        assert_eq!(parse_refeed_output(raw).unwrap(), ("r".to_string(), "S.".to_string()));
        let raw = r"some musing **Final Revised Summary:** \[\boxed{\text{T.}}\]";
        assert_eq!(parse_refeed_output(raw).unwrap(), (String::new(), "T.".to_string()));
        assert_eq!(parse_refeed_output("<answer>\n**Final Revised Summary:** Plain.\n</answer>").unwrap().1, "Plain.");
        assert!(parse_refeed_output("<think>only thinking</think>").is_err());
    }

    proptest! {
        #[test]
        fn revised_parse_is_idempotent(s in "[A-Za-z0-9 .,]{1,60}") {
            prop_assume!(!s.trim().is_empty());
            let first = parse_revised_summary(&format!("Revised Summary:\n{s}")).unwrap();
            let again = parse_revised_summary(&format!("Feedback Reasoning:\nok\nRevised Summary:\n{first}")).unwrap();
            prop_assert_eq!(first, again);
        }
    }
}
