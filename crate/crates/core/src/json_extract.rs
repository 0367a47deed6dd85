//! Pulls a JSON object out of free-form model output.
//!
//! Order of preference: the last fenced block whose body parses as a JSON
//! object, then the first brace-balanced object anywhere in the text.

use serde_json::{Map, Value};

pub fn extract_object(text: &str) -> Option<Map<String, Value>> {
    fenced_blocks(text)
        .into_iter()
        .rev()
        .find_map(|body| parse_object(body.trim()))
        .or_else(|| first_balanced_object(text))
}

fn parse_object(candidate: &str) -> Option<Map<String, Value>> {
    match serde_json::from_str::<Value>(candidate) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

/// Bodies of ```-fenced blocks; the info string on the opening line is
/// dropped. An unclosed final fence runs to the end of the text.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        // Single-line fences such as ```{"a":1}``` carry the body inline.
        let inline_close = after[..body_start].find("```");
        if let Some(close) = inline_close {
            let inline = &after[..close];
            let inline = inline.strip_prefix("json").unwrap_or(inline);
            blocks.push(inline);
            rest = &after[close + 3..];
            continue;
        }
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

fn first_balanced_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(rel) = text[start..].find('{') {
        let open = start + rel;
        if let Some(end) = balanced_end(bytes, open) {
            if let Some(map) = parse_object(&text[open..=end]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

/// Index of the `}` matching the `{` at `open`, honouring JSON strings.
fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Reads an integer field, accepting integral floats and numeric strings.
pub fn integer_field(map: &Map<String, Value>, key: &str) -> Option<i64> {
    match map.get(key)? {
        Value::Number(n) => n.as_i64().or_else(|| {
            n.as_f64()
                .filter(|f| f.fract() == 0.0 && f.abs() < 1e15)
                .map(|f| f as i64)
        }),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Reads a boolean field, accepting `"true"`/`"false"` strings.
pub fn bool_field(map: &Map<String, Value>, key: &str) -> Option<bool> {
    match map.get(key)? {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Reads a string field; `null` reads as empty.
pub fn string_field(map: &Map<String, Value>, key: &str) -> Option<String> {
    match map.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Null => Some(String::new()),
        Value::Array(items) => Some(
            items
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefers_last_fenced_block() {
        let text = "```json\n{\"grade\": 1}\n```\nOn reflection:\n```json\n{\"grade\": 4}\n```";
        assert_eq!(integer_field(&extract_object(text).unwrap(), "grade"), Some(4));
    }

    #[test]
    fn skips_fenced_block_that_is_not_json() {
        let text = "```json\n{\"grade\": 2}\n```\n```\nnot json\n```";
        assert_eq!(integer_field(&extract_object(text).unwrap(), "grade"), Some(2));
    }

    #[test]
    fn falls_back_to_balanced_object() {
        let text = "Sure! {\"a\": \"brace } in string\", \"b\": {\"c\": 1}} trailing {";
        let map = extract_object(text).unwrap();
        assert_eq!(map["a"], "brace } in string");
    }

    #[test]
    fn no_object() {
        assert!(extract_object("no json here {broken").is_none());
        assert!(extract_object("[1,2,3]").is_none());
    }

    #[test]
    fn lenient_field_readers() {
        let map = extract_object(r#"{"g": 4.0, "s": "5", "b": "TRUE", "n": null}"#).unwrap();
        assert_eq!(integer_field(&map, "g"), Some(4));
        assert_eq!(integer_field(&map, "s"), Some(5));
        assert_eq!(bool_field(&map, "b"), Some(true));
        assert_eq!(string_field(&map, "n").as_deref(), Some(""));
        let map = extract_object(r#"{"g": 4.5}"#).unwrap();
        assert_eq!(integer_field(&map, "g"), None);
    }
}
