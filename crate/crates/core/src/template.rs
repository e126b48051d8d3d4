//! Placeholder substitution for prompt templates.

/// Replaces `{name}` placeholders in a single left-to-right pass.
///
/// Braces that do not enclose a known name are copied through untouched, so
/// JSON examples inside templates survive, and substituted values are never
/// re-scanned, so a document containing `{summary}` stays literal.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::render;

    #[test]
    fn substitutes_known_names_only() {
        let t = r#"Text: {doc} then {"summary": "x"} and {missing}"#;
        assert_eq!(
            render(t, &[("doc", "D")]),
            r#"Text: D then {"summary": "x"} and {missing}"#
        );
    }

    #[test]
    fn values_are_not_rescanned() {
        assert_eq!(
            render("{a}|{b}", &[("a", "{b}"), ("b", "B")]),
            "{b}|B"
        );
    }
}
