use serde_json::Value;

use super::GatewayError;
use crate::agents::{GeneratedTest, GeneratedTestSuite, TestCategory, TESTS_PER_CATEGORY};
use crate::bench_ingest::TestVector;

/// Upper bound on a single generated test input.
pub const MAX_TEST_INPUT_BYTES: usize = 64 * 1024;

struct Fence<'a> {
    info: &'a str,
    body: String,
}

fn fence_marker(line: &str) -> Option<(&'static str, &str)> {
    let trimmed = line.trim_start();
    for marker in ["```", "~~~"] {
        if let Some(rest) = trimmed.strip_prefix(marker) {
            return Some((marker, rest.trim_start_matches(marker.chars().next().unwrap()).trim()));
        }
    }
    None
}

fn fences(text: &str) -> Vec<Fence<'_>> {
    let mut out = Vec::new();
    let mut open: Option<(&str, &str, String)> = None;
    for line in text.split_inclusive('\n') {
        match open.take() {
            None => {
                if let Some((marker, info)) = fence_marker(line) {
                    open = Some((marker, info, String::new()));
                }
            }
            Some((marker, info, mut body)) => {
                let t = line.trim();
                let fence_char = marker.chars().next().unwrap();
                if t.len() >= 3 && t.chars().all(|c| c == fence_char) {
                    out.push(Fence { info, body });
                } else {
                    body.push_str(line);
                    open = Some((marker, info, body));
                }
            }
        }
    }
    // A completion cut off mid-block still yields its partial body.
    if let Some((_, info, body)) = open {
        out.push(Fence { info, body });
    }
    out
}

fn info_matches(info: &str, hint: &str) -> bool {
    let lang = info.split(|c: char| c.is_whitespace() || c == ',' || c == '{').next().unwrap_or("");
    if lang.eq_ignore_ascii_case(hint) {
        return true;
    }
    matches!(
        (hint.to_ascii_lowercase().as_str(), lang.to_ascii_lowercase().as_str()),
        ("ruby", "rb") | ("python", "py") | ("python", "python3")
    )
}

/// Drops leading blank lines and trailing whitespace, keeping one final
/// newline when the text had one.
fn tidy(text: &str) -> String {
    let end = text.trim_end();
    let had_newline = text[end.len()..].contains('\n');
    let mut start = 0;
    for line in end.split_inclusive('\n') {
        if line.trim().is_empty() && line.ends_with('\n') {
            start += line.len();
        } else {
            break;
        }
    }
    let mut out = end[start..].to_owned();
    if had_newline && !out.is_empty() {
        out.push('\n');
    }
    out
}

/// Content of the last fenced block tagged with `language_hint`, else the
/// last fenced block, else the whole completion.
pub fn extract_code_block(completion: &str, language_hint: &str) -> String {
    let blocks = fences(completion);
    let chosen = blocks
        .iter()
        .rev()
        .find(|f| info_matches(f.info, language_hint))
        .or_else(|| blocks.last());
    match chosen {
        Some(f) => tidy(&f.body),
        None => tidy(completion),
    }
}

fn payload_candidates(completion: &str) -> Vec<String> {
    let mut out: Vec<String> = fences(completion)
        .into_iter()
        .rev()
        .filter(|f| f.info.is_empty() || info_matches(f.info, "json"))
        .map(|f| f.body)
        .collect();
    if let (Some(start), Some(end)) = (completion.find('{'), completion.rfind('}')) {
        if start < end {
            out.push(completion[start..=end].to_owned());
        }
    }
    out
}

fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn parse_category(obj: &serde_json::Map<String, Value>, category: TestCategory) -> Result<Vec<GeneratedTest>, GatewayError> {
    let items = match obj.get(category.key()) {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items.clone(),
        Some(_) => {
            return Err(GatewayError::MalformedTestPayload(format!(
                "category {} is not an array",
                category.key()
            )))
        }
    };
    if items.len() != TESTS_PER_CATEGORY {
        return Err(GatewayError::Cardinality {
            category: category.key().to_owned(),
            found: items.len(),
            expected: TESTS_PER_CATEGORY,
        });
    }
    items
        .iter()
        .map(|item| {
            let input = item.get("input").and_then(as_text);
            let output = item.get("output").and_then(as_text);
            match (input, output) {
                (Some(input), Some(output)) => {
                    if input.len() > MAX_TEST_INPUT_BYTES {
                        return Err(GatewayError::MalformedTestPayload(format!(
                            "{} test input is {} bytes, cap is {MAX_TEST_INPUT_BYTES}",
                            category.key(),
                            input.len()
                        )));
                    }
                    Ok(GeneratedTest {
                        vector: TestVector::new(input, output),
                        category,
                    })
                }
                _ => Err(GatewayError::MalformedTestPayload(format!(
                    "{} test lacks a textual input or output",
                    category.key()
                ))),
            }
        })
        .collect()
}

/// Parses the `{"basic": [...], "edge": [...], "large": [...]}` payload,
/// each entry `{input, output}`, exactly two per category.
pub fn extract_test_suite(completion: &str) -> Result<GeneratedTestSuite, GatewayError> {
    let object = payload_candidates(completion)
        .iter()
        .find_map(|c| match serde_json::from_str::<Value>(c.trim()) {
            Ok(Value::Object(obj)) => Some(obj),
            _ => None,
        })
        .ok_or_else(|| GatewayError::MalformedTestPayload("no JSON object found".into()))?;

    let mut tests = Vec::with_capacity(TESTS_PER_CATEGORY * TestCategory::ALL.len());
    for category in TestCategory::ALL {
        tests.extend(parse_category(&object, category)?);
    }
    GeneratedTestSuite::new(tests).map_err(GatewayError::MalformedTestPayload)
}
