//! Caption decomposition into six part-level descriptions.

mod cache;
mod client;
mod decompose;
mod fallback;
mod parse;
mod prompt;

pub use cache::{cache_key, DecompositionCache};
pub use client::{CompletionClient, FnClient, HttpCompletionClient, LlmSettings};
pub use decompose::{DecomposeOptions, Decomposer};
pub use fallback::rule_fallback;
pub use parse::{parse_decomposition, ParseError};
pub use prompt::{build_prompt, PromptSpec};

use serde::{Deserialize, Serialize};

use crate::motion::{Part, PARTS};

pub const IDLE_PHRASE: &str = "does nothing";

/// Misspelling common in model replies; read as idle.
pub(crate) const IDLE_TYPO: &str = "dose nothing";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextSource {
    Llm,
    Cache,
    Fallback,
    #[default]
    Manual,
}

/// One description per body part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartTexts {
    pub head: String,
    pub left_arm: String,
    pub right_arm: String,
    pub torso: String,
    pub left_leg: String,
    pub right_leg: String,
    #[serde(default)]
    pub source: TextSource,
}

impl PartTexts {
    pub fn from_fn(source: TextSource, mut f: impl FnMut(Part) -> String) -> Self {
        Self {
            head: f(Part::Head),
            left_arm: f(Part::LeftArm),
            right_arm: f(Part::RightArm),
            torso: f(Part::Torso),
            left_leg: f(Part::LeftLeg),
            right_leg: f(Part::RightLeg),
            source,
        }
    }

    pub fn idle(source: TextSource) -> Self {
        Self::from_fn(source, |_| IDLE_PHRASE.to_string())
    }

    pub fn get(&self, part: Part) -> &str {
        match part {
            Part::Head => &self.head,
            Part::LeftArm => &self.left_arm,
            Part::RightArm => &self.right_arm,
            Part::Torso => &self.torso,
            Part::LeftLeg => &self.left_leg,
            Part::RightLeg => &self.right_leg,
        }
    }

    pub fn get_mut(&mut self, part: Part) -> &mut String {
        match part {
            Part::Head => &mut self.head,
            Part::LeftArm => &mut self.left_arm,
            Part::RightArm => &mut self.right_arm,
            Part::Torso => &mut self.torso,
            Part::LeftLeg => &mut self.left_leg,
            Part::RightLeg => &mut self.right_leg,
        }
    }

    pub fn with_source(mut self, source: TextSource) -> Self {
        self.source = source;
        self
    }

    pub fn texts(&self) -> [&str; 6] {
        PARTS.map(|p| self.get(p))
    }

    /// Compact six-key JSON object (no source tag), as used in prompts.
    pub fn to_json_object(&self) -> String {
        let mut map = serde_json::Map::new();
        for p in PARTS {
            map.insert(p.name().into(), self.get(p).into());
        }
        serde_json::Value::Object(map).to_string()
    }

    pub fn is_idle(&self, part: Part) -> bool {
        is_idle_phrase(self.get(part))
    }
}

pub fn is_idle_phrase(text: &str) -> bool {
    let t = text.trim().to_lowercase();
    t == IDLE_PHRASE || t == IDLE_TYPO
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_object_has_six_keys_in_slot_order() {
        let t = PartTexts::idle(TextSource::Manual);
        let s = t.to_json_object();
        assert!(s.starts_with("{\"head\""));
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 6);
    }

    #[test]
    fn idle_detection_accepts_typo() {
        assert!(is_idle_phrase("Dose nothing"));
        assert!(is_idle_phrase(" does nothing "));
        assert!(!is_idle_phrase("waves hand"));
    }
}
