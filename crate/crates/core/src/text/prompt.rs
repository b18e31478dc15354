use serde::{Deserialize, Serialize};

use super::{PartTexts, TextSource};
use crate::error::{Error, Result};

const BUNDLED_V1: &str = include_str!("../../data/prompt_v1.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub caption: String,
    pub parts: PartTexts,
}

/// Three-section prompt: task definition, output requirements, and
/// worked examples. `version` is part of every cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub version: String,
    pub task: String,
    pub requirements: String,
    pub examples: Vec<FewShotExample>,
}

impl PromptSpec {
    /// The prompt shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_V1).expect("bundled prompt spec is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut spec: PromptSpec = serde_json::from_str(text)?;
        for ex in &mut spec.examples {
            ex.parts.source = TextSource::Manual;
        }
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::Config("prompt spec needs a few-shot example".into()));
        }
        if self.version.trim().is_empty() {
            return Err(Error::Config("prompt spec needs a version".into()));
        }
        Ok(())
    }
}

/// Deterministic prompt text for one caption. Captions are embedded as JSON
/// string literals, so quotes and backslashes survive the round trip.
pub fn build_prompt(spec: &PromptSpec, caption: &str) -> Result<String> {
    if caption.trim().is_empty() {
        return Err(Error::InvalidArgument("empty caption".into()));
    }
    spec.check()?;
    let quote = |s: &str| serde_json::Value::from(s).to_string();
    let mut out = String::new();
    out.push_str("## Task\n");
    out.push_str(spec.task.trim());
    out.push_str("\n\n## Output requirements\n");
    out.push_str(spec.requirements.trim());
    out.push_str("\n\n## Examples\n");
    for ex in &spec.examples {
        out.push_str("Description: ");
        out.push_str(&quote(&ex.caption));
        out.push_str("\nOutput: ");
        out.push_str(&ex.parts.to_json_object());
        out.push_str("\n\n");
    }
    out.push_str("## Query\nDescription: ");
    out.push_str(&quote(caption.trim()));
    out.push_str("\nOutput:");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_decomposition;

    #[test]
    fn bundled_spec_is_valid() {
        let spec = PromptSpec::bundled();
        assert!(!spec.examples.is_empty());
        assert!(spec.requirements.contains("left_arm"));
    }

    #[test]
    fn deterministic() {
        let spec = PromptSpec::bundled();
        assert_eq!(
            build_prompt(&spec, "a person jumps").unwrap(),
            build_prompt(&spec, "a person jumps").unwrap()
        );
    }

    #[test]
    fn examples_in_order() {
        let mut spec = PromptSpec::bundled();
        spec.examples.truncate(2);
        let p = build_prompt(&spec, "a person jumps").unwrap();
        let first = p.find(&spec.examples[0].caption).unwrap();
        let second = p.find(&spec.examples[1].caption).unwrap();
        let query = p.find("## Query").unwrap();
        assert!(first < second && second < query);
        let task = p.find("## Task").unwrap();
        let req = p.find("## Output requirements").unwrap();
        assert!(task < req && req < first);
    }

    #[test]
    fn special_characters_are_escaped() {
        let mut spec = PromptSpec::bundled();
        let tricky = "he says \"hi\" \\ then {waves}\nagain";
        spec.examples[0].caption = tricky.to_string();
        spec.examples[0].parts.head = "quotes \"x\"".into();
        let p = build_prompt(&spec, tricky).unwrap();
        // Parse back every serialized example caption and payload.
        for line in p.lines() {
            if let Some(rest) = line.strip_prefix("Description: ") {
                let back: String = serde_json::from_str(rest).unwrap();
                assert!(back == tricky || spec.examples.iter().any(|e| e.caption == back));
            }
            if let Some(rest) = line.strip_prefix("Output: ") {
                parse_decomposition(rest).unwrap();
            }
        }
        let first_payload = p
            .lines()
            .find_map(|l| l.strip_prefix("Output: "))
            .unwrap();
        assert_eq!(
            parse_decomposition(first_payload).unwrap().head,
            "quotes \"x\""
        );
    }

    #[test]
    fn empty_caption_is_rejected() {
        assert!(build_prompt(&PromptSpec::bundled(), "  ").is_err());
    }
}
