use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One extraction record as produced by the model: head, relation, tail,
/// verbatim evidence span, coarse category and self-assessed confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTuple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub evidence: String,
    pub category: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    /// Zero-based record position inside the output block, when known.
    pub record: Option<usize>,
    pub message: String,
}

impl ParseDiagnostic {
    fn new(record: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            record,
            message: message.into(),
        }
    }
}

/// Contents of the first fenced code block, or the whole text.
fn strip_fences(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let after = &text[open + 3..];
    // Skip an optional language tag on the fence line.
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

/// Byte spans of top-level `open..close` groups, skipping string literals.
fn balanced_spans(text: &str, open: u8, close: u8, depth_target: usize) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_str = false;
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            _ if b == open => {
                if depth == depth_target {
                    start = i;
                }
                depth += 1;
            }
            _ if b == close && depth > 0 => {
                depth -= 1;
                if depth == depth_target {
                    spans.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    spans
}

/// Drop commas that directly precede `}` or `]`, outside string literals.
fn remove_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_str = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        if c == '"' {
            in_str = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|n| !n.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

fn as_text(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn record_from_value(idx: usize, v: &Value, diags: &mut Vec<ParseDiagnostic>) -> Option<RawTuple> {
    let Some(obj) = v.as_object() else {
        diags.push(ParseDiagnostic::new(Some(idx), "record is not an object"));
        return None;
    };
    let mut missing = Vec::new();
    let mut get = |names: &[&str], label: &'static str| {
        let s = as_text(field(obj, names)).unwrap_or_default();
        if s.is_empty() {
            missing.push(label);
        }
        s
    };
    let head = get(&["head", "h", "subject"], "head");
    let relation = get(&["relation", "r", "predicate"], "relation");
    let tail = get(&["tail", "t", "object"], "tail");
    let category = get(&["category", "c"], "category");
    if !missing.is_empty() {
        diags.push(ParseDiagnostic::new(
            Some(idx),
            format!("missing field(s): {}", missing.join(", ")),
        ));
        return None;
    }
    let evidence = as_text(field(obj, &["evidence", "e"])).unwrap_or_default();

    let confidence = match field(obj, &["confidence", "p_llm", "p"]) {
        None | Some(Value::Null) => 1.0,
        Some(Value::Number(n)) => n.as_f64().unwrap_or(1.0),
        Some(Value::String(s)) => match s.trim().parse::<f64>() {
            Ok(p) => p,
            Err(_) => {
                diags.push(ParseDiagnostic::new(Some(idx), format!("non-numeric confidence `{s}`, using 1.0")));
                1.0
            }
        },
        Some(other) => {
            diags.push(ParseDiagnostic::new(Some(idx), format!("invalid confidence {other}, using 1.0")));
            1.0
        }
    };
    let clamped = if confidence.is_nan() { 1.0 } else { confidence.clamp(0.0, 1.0) };
    if clamped != confidence {
        diags.push(ParseDiagnostic::new(
            Some(idx),
            format!("confidence {confidence} clamped to {clamped}"),
        ));
    }
    Some(RawTuple {
        head,
        relation,
        tail,
        evidence,
        category,
        confidence: clamped,
    })
}

/// First balanced `{..}` object in `text` that parses as JSON, after
/// stripping fences and trailing commas.
pub(crate) fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let body = strip_fences(text);
    balanced_spans(body, b'{', b'}', 0).into_iter().find_map(|(s, e)| {
        match serde_json::from_str::<Value>(&remove_trailing_commas(&body[s..e])) {
            Ok(Value::Object(m)) => Some(m),
            _ => None,
        }
    })
}

/// Trimmed string value of the first present alias of a field.
pub(crate) fn text_field(obj: &serde_json::Map<String, Value>, names: &[&str]) -> Option<String> {
    as_text(field(obj, names)).filter(|s| !s.is_empty())
}

/// Lenient parse of the model's structured output block.
///
/// Tolerates code fences, prose around the block, trailing commas and a
/// missing confidence (defaults to 1.0). Each record is parsed on its own, so
/// a malformed record yields a diagnostic without aborting the batch.
pub fn parse_tuples(raw: &str) -> (Vec<RawTuple>, Vec<ParseDiagnostic>) {
    let mut tuples = Vec::new();
    let mut diags = Vec::new();
    let body = strip_fences(raw);

    let region = match balanced_spans(body, b'[', b']', 0).first() {
        Some(&(s, e)) => &body[s + 1..e - 1],
        None => body,
    };
    let objects = balanced_spans(region, b'{', b'}', 0);
    if objects.is_empty() {
        if !region.trim().is_empty() && region.trim() != "[]" {
            diags.push(ParseDiagnostic::new(None, "no records found in output"));
        }
        return (tuples, diags);
    }
    for (idx, (s, e)) in objects.into_iter().enumerate() {
        let cleaned = remove_trailing_commas(&region[s..e]);
        match serde_json::from_str::<Value>(&cleaned) {
            Ok(v) => {
                if let Some(t) = record_from_value(idx, &v, &mut diags) {
                    tuples.push(t);
                }
            }
            Err(err) => diags.push(ParseDiagnostic::new(Some(idx), format!("malformed record: {err}"))),
        }
    }
    (tuples, diags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn well_formed_block() {
        let raw = r#"[
          {"head":"森林覆盖率","relation":"hasValue","tail":"23.04%","evidence":"森林覆盖率达到23.04%","category":"Quantitative","confidence":0.9},
          {"head":"数据","relation":"dataSourceOf","tail":"MODIS","evidence":"数据来源于MODIS","category":"Provenance & Method","confidence":0.8}
        ]"#;
        let (t, d) = parse_tuples(raw);
        assert_eq!(t.len(), 2);
        assert!(d.is_empty(), "{d:?}");
        assert_eq!(t[0].relation, "hasValue");
    }

    #[test]
    fn missing_tail_skips_record() {
        let raw = r#"[{"head":"a","relation":"hasValue","evidence":"x","category":"Quantitative"}]"#;
        let (t, d) = parse_tuples(raw);
        assert!(t.is_empty());
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("tail"));
    }

    #[test]
    fn fences_trailing_commas_and_default_confidence() {
        let raw = "Here you go:\n```json\n[\n {\"head\":\"a\",\"relation\":\"r\",\"tail\":\"b\",\"category\":\"c\",},\n]\n```\nDone.";
        let (t, d) = parse_tuples(raw);
        assert_eq!(t.len(), 1, "{d:?}");
        assert_eq!(t[0].confidence, 1.0);
        assert!(d.is_empty());
    }

    #[test]
    fn confidence_clamp_boundaries() {
        let cases = [(-0.1, 0.0, true), (0.0, 0.0, false), (0.5, 0.5, false), (1.0, 1.0, false), (1.3, 1.0, true)];
        for (given, expect, diag) in cases {
            let raw = format!(r#"[{{"head":"a","relation":"r","tail":"b","category":"c","confidence":{given}}}]"#);
            let (t, d) = parse_tuples(&raw);
            assert_eq!(t[0].confidence, expect, "{given}");
            assert_eq!(!d.is_empty(), diag, "{given}");
        }
    }

    #[test]
    fn one_bad_record_does_not_abort() {
        let raw = r#"[{"head":"a","relation":"r","tail":"b","category":"c"}, {"head": oops}, {"h":"x","r":"y","t":"z","c":"w","p_llm":"0.4"}]"#;
        let (t, d) = parse_tuples(raw);
        assert_eq!(t.len(), 2);
        assert_eq!(d.len(), 1);
        assert_eq!(t[1].confidence, 0.4);
    }

    #[test]
    fn empty_array_is_silent() {
        let (t, d) = parse_tuples("[]");
        assert!(t.is_empty() && d.is_empty());
    }

    proptest! {
        #[test]
        fn never_panics(s in ".{0,300}") {
            let _ = parse_tuples(&s);
        }

        #[test]
        fn never_panics_on_jsonish(s in r#"[\[\]\{\}",:a-z0-9 \\.\-]{0,200}"#) {
            let _ = parse_tuples(&s);
        }
    }
}
