use serde_json::Value;

/// No parseable `{"annotations": [...]}` object in a response.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no annotation payload: {message}")]
pub struct PayloadError {
    pub message: String,
    /// The full response text, for the repair path.
    pub raw: String,
}

/// Bodies of fenced code blocks, in order.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // Skip the info string (e.g. `json`) up to the end of the line.
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    out
}

/// Balanced top-level `{...}` spans of `text`, honouring JSON strings.
/// The second value reports an object that opened but never closed.
fn top_level_objects(text: &str) -> (Vec<&str>, bool) {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    out.push(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    (out, depth > 0)
}

/// Locate the outermost object carrying an `annotations` array, tolerating
/// surrounding prose and code fences, and return that array.
pub fn extract_payload(text: &str) -> Result<Vec<Value>, PayloadError> {
    let fail = |message: String| PayloadError {
        message,
        raw: text.to_owned(),
    };
    let mut candidates = fenced_blocks(text);
    candidates.push(text);

    let mut last_error = None;
    let mut truncated = false;
    for candidate in candidates {
        let (objects, open) = top_level_objects(candidate);
        truncated |= open;
        for obj in objects {
            match serde_json::from_str::<Value>(obj) {
                Ok(Value::Object(mut map)) => match map.remove("annotations") {
                    Some(Value::Array(items)) => return Ok(items),
                    Some(_) => last_error = Some("`annotations` is not an array".to_owned()),
                    None => last_error = Some("object has no `annotations` key".to_owned()),
                },
                Ok(_) => {}
                Err(e) => last_error = Some(e.to_string()),
            }
        }
    }
    if truncated {
        return Err(fail("truncated JSON object".into()));
    }
    Err(fail(last_error.unwrap_or_else(|| "no JSON object found".into())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_empty_payload() {
        assert!(extract_payload(r#"{"annotations": []}"#).unwrap().is_empty());
    }

    #[test]
    fn fenced_with_prose() {
        let text = "Here you go:\n```json\n{\"annotations\": [{\"begin\": 0, \"end\": 3, \"label\": \"D\", \"span_text\": \"a}b\"}]}\n```\nDone.";
        let items = extract_payload(text).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0]["span_text"], "a}b");
    }

    #[test]
    fn truncated_is_an_error() {
        let err = extract_payload(r#"{"annotations": [{"begin": 0,"#).unwrap_err();
        assert!(err.message.contains("truncated"));
        assert!(err.raw.starts_with("{\"annotations\""));
    }

    #[test]
    fn skips_unrelated_objects() {
        let text = r#"Schema {"type": "object"} then {"annotations": [{"label": "X"}]}"#;
        assert_eq!(extract_payload(text).unwrap().len(), 1);
        assert!(extract_payload("no json here").is_err());
        assert!(extract_payload(r#"{"annotations": {}}"#).is_err());
    }
}
