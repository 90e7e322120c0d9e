//! Tokenization and helpers for pulling structured data out of model output.

use serde_json::Value;

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Remove Markdown code fences, keeping their contents.
pub fn strip_fences(raw: &str) -> String {
    raw.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// First parseable JSON value in `raw` that opens with `open` (`{` or `[`).
fn first_json(raw: &str, open: char) -> Option<Value> {
    let text = strip_fences(raw);
    for (i, _) in text.match_indices(open) {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            return Some(v);
        }
    }
    None
}

pub fn first_json_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    match first_json(raw, '{')? {
        Value::Object(m) => Some(m),
        _ => None,
    }
}

pub fn first_json_array(raw: &str) -> Option<Vec<Value>> {
    match first_json(raw, '[')? {
        Value::Array(a) => Some(a),
        _ => None,
    }
}

/// Strings of a JSON array, skipping non-string entries.
pub fn string_list(v: Option<&Value>) -> Vec<String> {
    v.and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

/// First `max_chars` characters of `s`.
pub fn prefix_chars(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
