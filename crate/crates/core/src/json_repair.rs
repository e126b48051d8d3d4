//! Lenient extraction of JSON from model output.
//!
//! Models wrap JSON in code fences, precede it with prose or leave trailing
//! commas in arrays. [`repair_and_parse_json`] strips fences, locates the
//! first balanced array or object of the requested shape, drops trailing
//! commas outside strings and parses the result.

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Array,
    Object,
    Any,
}

impl Shape {
    fn opens(self, c: char) -> bool {
        match self {
            Shape::Array => c == '[',
            Shape::Object => c == '{',
            Shape::Any => c == '[' || c == '{',
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JsonRepairError {
    #[error("no balanced JSON structure found in model output")]
    NoStructure { raw: String },
    #[error("JSON does not match the expected shape: {message}")]
    Mismatch { raw: String, message: String },
}

impl JsonRepairError {
    pub fn raw(&self) -> &str {
        match self {
            JsonRepairError::NoStructure { raw } | JsonRepairError::Mismatch { raw, .. } => raw,
        }
    }
}

/// Parses the first well-formed JSON value of `shape` found in `raw`.
pub fn repair_and_parse_json(raw: &str, shape: Shape) -> Result<Value, JsonRepairError> {
    for region in candidate_regions(raw) {
        if let Some(value) = first_value(&region, shape) {
            return Ok(value);
        }
    }
    Err(JsonRepairError::NoStructure {
        raw: raw.to_string(),
    })
}

/// As [`repair_and_parse_json`], then deserializes into `T`.
pub fn parse_as<T: DeserializeOwned>(raw: &str, shape: Shape) -> Result<T, JsonRepairError> {
    let value = repair_and_parse_json(raw, shape)?;
    serde_json::from_value(value).map_err(|e| JsonRepairError::Mismatch {
        raw: raw.to_string(),
        message: e.to_string(),
    })
}

/// Contents of fenced blocks first (in order), then the whole text.
fn candidate_regions(raw: &str) -> Vec<String> {
    let mut regions = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let body = &rest[open + 3..];
        // skip an info string such as `json`
        let body = match body.find('\n') {
            Some(nl) if body[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => {
                &body[nl + 1..]
            }
            _ => body,
        };
        match body.find("```") {
            Some(close) => {
                regions.push(body[..close].to_string());
                rest = &body[close + 3..];
            }
            None => {
                regions.push(body.to_string());
                break;
            }
        }
    }
    regions.push(raw.to_string());
    regions
}

fn first_value(text: &str, shape: Shape) -> Option<Value> {
    let chars: Vec<char> = text.chars().collect();
    for start in 0..chars.len() {
        if !shape.opens(chars[start]) {
            continue;
        }
        if let Some(end) = balanced_end(&chars, start) {
            let slice = strip_trailing_commas(&chars[start..=end]);
            if let Ok(v) = serde_json::from_str::<Value>(&slice) {
                return Some(v);
            }
        }
    }
    None
}

/// Index of the bracket closing the one at `start`, respecting strings.
fn balanced_end(chars: &[char], start: usize) -> Option<usize> {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '[' => stack.push(']'),
            '{' => stack.push('}'),
            ']' | '}' => {
                if stack.pop() != Some(c) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn strip_trailing_commas(chars: &[char]) -> String {
    let mut out = String::with_capacity(chars.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some(']') | Some('}')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}
