use serde_json::Value;

use super::{PartTexts, TextSource, IDLE_PHRASE, IDLE_TYPO};
use crate::motion::{Part, PARTS};

/// Distinct failure kinds so a caller can decide to retry.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no JSON object found")]
    NoJsonObject,
    #[error("missing part keys: {0:?}")]
    MissingKeys(Vec<String>),
    #[error("unexpected keys: {0:?}")]
    ExtraKeys(Vec<String>),
    #[error("value for {key} is not a string")]
    NonStringValue { key: String },
}

/// Byte ranges of balanced `{...}` spans, in order of their opening brace.
fn object_spans(raw: &str) -> impl Iterator<Item = &str> {
    let bytes = raw.as_bytes();
    (0..bytes.len())
        .filter(move |&i| bytes[i] == b'{')
        .filter_map(move |start| {
            let mut depth = 0usize;
            let mut in_string = false;
            let mut escaped = false;
            for (i, &b) in bytes.iter().enumerate().skip(start) {
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
                            return Some(&raw[start..=i]);
                        }
                    }
                    _ => {}
                }
            }
            None
        })
}

/// Extracts and validates the first JSON object in an LLM reply.
///
/// Surrounding prose and code fences are ignored. Keys are matched after
/// case/separator normalization (`"Left Arm"` is `left_arm`). Empty strings
/// and nulls become the idle phrase, as does the common `"dose nothing"`
/// misspelling.
pub fn parse_decomposition(raw: &str) -> Result<PartTexts, ParseError> {
    let object = object_spans(raw)
        .find_map(|span| match serde_json::from_str::<Value>(span) {
            Ok(Value::Object(map)) => Some(map),
            _ => None,
        })
        .ok_or(ParseError::NoJsonObject)?;

    let mut values: [Option<String>; 6] = Default::default();
    let mut extra = Vec::new();
    for (key, value) in &object {
        let Some(part) = Part::from_name(key) else {
            extra.push(key.clone());
            continue;
        };
        if values[part.index()].is_some() {
            extra.push(key.clone());
            continue;
        }
        let text = match value {
            Value::Null => IDLE_PHRASE.to_string(),
            Value::String(s) => {
                let s = s.trim();
                if s.is_empty() || s.eq_ignore_ascii_case(IDLE_TYPO) {
                    IDLE_PHRASE.to_string()
                } else {
                    s.to_string()
                }
            }
            _ => return Err(ParseError::NonStringValue { key: key.clone() }),
        };
        values[part.index()] = Some(text);
    }
    if !extra.is_empty() {
        return Err(ParseError::ExtraKeys(extra));
    }
    let missing: Vec<String> = PARTS
        .iter()
        .filter(|p| values[p.index()].is_none())
        .map(|p| p.name().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ParseError::MissingKeys(missing));
    }
    Ok(PartTexts::from_fn(TextSource::Llm, |p| {
        values[p.index()].take().unwrap_or_default()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WAVE_AND_STEP_REPLY: &str = r#"Sure! Here is the decomposition:
```json
{
  "head": "dose nothing",
  "left arm": "dose nothing",
  "right arm": "waves hand",
  "torso": "slightly bends down",
  "left leg": "takes a few steps forward",
  "right leg": "takes a few steps forward"
}
```"#;

    #[test]
    fn wave_and_step_example() {
        let t = parse_decomposition(WAVE_AND_STEP_REPLY).unwrap();
        assert_eq!(t.head, "does nothing");
        assert_eq!(t.left_arm, "does nothing");
        assert_eq!(t.right_arm, "waves hand");
        assert_eq!(t.torso, "slightly bends down");
        assert_eq!(t.left_leg, "takes a few steps forward");
        assert_eq!(t.right_leg, "takes a few steps forward");
        assert_eq!(t.source, TextSource::Llm);
    }

    #[test]
    fn empty_and_null_become_idle() {
        let raw = r#"{"head":"","left_arm":null,"right_arm":"waves","torso":"x","left_leg":"y","right_leg":"z"}"#;
        let t = parse_decomposition(raw).unwrap();
        assert_eq!(t.head, IDLE_PHRASE);
        assert_eq!(t.left_arm, IDLE_PHRASE);
        assert_eq!(t.right_arm, "waves");
    }

    #[test]
    fn prose_without_braces() {
        assert_eq!(
            parse_decomposition("I cannot help with that."),
            Err(ParseError::NoJsonObject)
        );
        assert_eq!(
            parse_decomposition("{ not json at all"),
            Err(ParseError::NoJsonObject)
        );
    }

    #[test]
    fn distinct_error_kinds() {
        let missing = r#"{"head":"a","left_arm":"b"}"#;
        assert!(matches!(
            parse_decomposition(missing),
            Err(ParseError::MissingKeys(k)) if k.len() == 4
        ));
        let extra = r#"{"head":"a","left_arm":"b","right_arm":"c","torso":"d","left_leg":"e","right_leg":"f","tail":"g"}"#;
        assert_eq!(
            parse_decomposition(extra),
            Err(ParseError::ExtraKeys(vec!["tail".into()]))
        );
        let number = r#"{"head":1,"left_arm":"b","right_arm":"c","torso":"d","left_leg":"e","right_leg":"f"}"#;
        assert_eq!(
            parse_decomposition(number),
            Err(ParseError::NonStringValue { key: "head".into() })
        );
    }

    #[test]
    fn braces_inside_strings_and_invalid_leading_objects() {
        let raw = r#"note {oops} then {"head":"says {hi}","left_arm":"a","right_arm":"b","torso":"c","left_leg":"d","right_leg":"e"}"#;
        let t = parse_decomposition(raw).unwrap();
        assert_eq!(t.head, "says {hi}");
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(texts in proptest::collection::vec("[a-zA-Z0-9 ,.'\"{}\\\\]{1,30}", 6)) {
            let expected = PartTexts::from_fn(TextSource::Llm, |p| {
                let t = texts[p.index()].trim();
                if t.is_empty() || t.eq_ignore_ascii_case(IDLE_TYPO) { IDLE_PHRASE.into() } else { t.to_string() }
            });
            let back = parse_decomposition(&expected.to_json_object()).unwrap();
            prop_assert_eq!(back, expected);
        }
    }
}
