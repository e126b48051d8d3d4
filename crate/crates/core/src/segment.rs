//! Rule-based sentence segmentation.
//!
//! A sentence ends at `.`, `!` or `?` (plus any trailing run of terminal
//! punctuation and closing quotes/brackets) when it is followed by whitespace
//! and then an uppercase letter, optionally behind an opening quote or
//! bracket. A `.` ending a known abbreviation or a single-letter initial never
//! ends a sentence.

/// Tokens (lowercase, without the final period) that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "gen", "col", "lt", "sgt", "capt",
    "gov", "sen", "rep", "rev", "hon", "pres", "u.s", "u.k", "u.n", "e.g", "i.e", "vs", "inc",
    "ltd", "corp", "co", "no", "fig", "approx", "dept", "est", "jan", "feb", "mar", "apr", "aug",
    "sept", "oct", "nov", "dec",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

/// The whitespace-delimited token that ends right before `end` (exclusive).
fn token_before(chars: &[char], end: usize) -> String {
    let start = chars[..end]
        .iter()
        .rposition(|c| c.is_whitespace())
        .map_or(0, |p| p + 1);
    chars[start..end]
        .iter()
        .filter(|c| !is_opener(**c))
        .collect()
}

fn guarded(token: &str) -> bool {
    let mut letters = token.chars();
    if let (Some(first), None) = (letters.next(), letters.next()) {
        if first.is_uppercase() {
            return true;
        }
    }
    let lower = token.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

fn starts_sentence(chars: &[char], mut i: usize) -> bool {
    while i < chars.len() && is_opener(chars[i]) {
        i += 1;
    }
    chars.get(i).is_some_and(|c| c.is_uppercase())
}

/// Splits a summary into sentences.
///
/// The output is deterministic, every sentence is trimmed and non-empty, and
/// joining the sentences with single spaces reproduces the input up to
/// whitespace collapsing. Whitespace-only input yields an empty list.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;

    while i < chars.len() {
        if !is_terminal(chars[i]) {
            i += 1;
            continue;
        }
        let punct_at = i;
        let mut end = i + 1;
        while end < chars.len() && (is_terminal(chars[end]) || is_closer(chars[end])) {
            end += 1;
        }
        let mut next = end;
        while next < chars.len() && chars[next].is_whitespace() {
            next += 1;
        }
        let boundary = next > end
            && starts_sentence(&chars, next)
            && !(chars[punct_at] == '.' && guarded(&token_before(&chars, punct_at)));
        if boundary {
            push_trimmed(&mut sentences, &chars[start..end]);
            start = next;
            i = next;
        } else {
            i = end;
        }
    }
    push_trimmed(&mut sentences, &chars[start..]);
    sentences
}

fn push_trimmed(out: &mut Vec<String>, span: &[char]) {
    let s: String = span.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde::Deserialize;

    #[derive(Deserialize)]
    struct Case {
        text: String,
        sentences: Vec<String>,
    }

    #[test]
    fn hand_segmented_fixtures() {
        let cases: Vec<Case> =
            serde_json::from_str(include_str!("../fixtures/segmentation.json")).unwrap();
        for case in cases {
            assert_eq!(segment_sentences(&case.text), case.sentences, "{:?}", case.text);
        }
    }

    #[test]
    fn whitespace_only_is_empty() {
        assert!(segment_sentences("  \n\t ").is_empty());
        assert!(segment_sentences("").is_empty());
    }

    fn collapse(s: &str) -> String {
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    proptest! {
        #[test]
        fn concatenation_preserves_text(text in "[A-Za-z .!?\"()\n]{0,80}") {
            let sentences = segment_sentences(&text);
            prop_assert_eq!(collapse(&sentences.join(" ")), collapse(&text));
            prop_assert!(sentences.iter().all(|s| !s.trim().is_empty()));
            prop_assert_eq!(segment_sentences(&text), sentences);
        }
    }
}
