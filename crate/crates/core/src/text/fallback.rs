//! Keyword routing used when no completion service is available.

use std::sync::LazyLock;

use regex::Regex;

use super::{PartTexts, TextSource, IDLE_PHRASE};
use crate::motion::{Part, PARTS};

static CLAUSE_SPLIT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\s*(?:[,;.!]|\band\b|\bthen\b|\bwhile\b|\bbefore\b|\bafter\b)\s*").unwrap()
});
static SUBJECT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?:(?:a|an|the)\s+(?:man|woman|person|human|figure|guy|lady|boy|girl|child|character|someone)|someone|somebody|he|she|they|it)\s+",
    )
    .unwrap()
});
static WITH_LIMB: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\s*\b(?:with|using)\s+(?:his|her|their|the|a|one)\s+(?:left|right)\s+(?:legs?|foot|feet|hands?|arms?)\b")
        .unwrap()
});
static LATERAL_ARM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(left|right)\s+(?:hands?|arms?)\b").unwrap());
static LATERAL_LEG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(left|right)\s+(?:legs?|foot|feet|knee)\b").unwrap());
static ARM_WORDS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:hands?|arms?|wav(?:e|es|ing)|clap(?:s|ping)?|punch(?:es|ing)?|throw(?:s|ing)?|reach(?:es|ing)?)\b").unwrap()
});
static LEG_WORDS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:legs?|foot|feet|steps?|walk(?:s|ing)?|kick(?:s|ing)?|jump(?:s|ing)?|run(?:s|ning)?|jog(?:s|ging)?|hop(?:s|ping)?)\b").unwrap()
});
static TORSO_WORDS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:bend(?:s|ing)?|lean(?:s|ing)?|turn(?:s|ing)?|torso|spine|waist|bow(?:s|ing)?)\b")
        .unwrap()
});
static HEAD_WORDS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:head|look(?:s|ing)?|nod(?:s|ding)?)\b").unwrap()
});

fn side_parts(side: &str, left: Part, right: Part) -> Part {
    if side == "left" {
        left
    } else {
        right
    }
}

fn clean_clause(clause: &str) -> String {
    let c = SUBJECT.replace(clause.trim(), "");
    let c = WITH_LIMB.replace_all(&c, "");
    c.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Routes a clause to the parts it mentions; unmatched clauses go everywhere.
fn route(clause: &str) -> Vec<Part> {
    let mut parts = Vec::new();
    let lateral_arms: Vec<Part> = LATERAL_ARM
        .captures_iter(clause)
        .map(|c| side_parts(&c[1], Part::LeftArm, Part::RightArm))
        .collect();
    if !lateral_arms.is_empty() {
        parts.extend(lateral_arms);
    } else if ARM_WORDS.is_match(clause) {
        parts.extend([Part::LeftArm, Part::RightArm]);
    }
    let lateral_legs: Vec<Part> = LATERAL_LEG
        .captures_iter(clause)
        .map(|c| side_parts(&c[1], Part::LeftLeg, Part::RightLeg))
        .collect();
    if !lateral_legs.is_empty() {
        parts.extend(lateral_legs);
    } else if LEG_WORDS.is_match(clause) {
        parts.extend([Part::LeftLeg, Part::RightLeg]);
    }
    if TORSO_WORDS.is_match(clause) {
        parts.push(Part::Torso);
    }
    if HEAD_WORDS.is_match(clause) {
        parts.push(Part::Head);
    }
    if parts.is_empty() {
        parts.extend(PARTS);
    }
    parts.sort();
    parts.dedup();
    parts
}

/// Deterministic, total decomposition by keyword and laterality.
///
/// The caption is split into clauses at punctuation and at "and", "then",
/// "while", "before" and "after". Lateralized limb mentions ("left hand",
/// "right leg") pick one side; unlateralized limb verbs pick both sides.
/// Parts that receive no clause are idle.
pub fn rule_fallback(caption: &str) -> PartTexts {
    let lower = caption.to_lowercase();
    let mut assigned: [Vec<String>; 6] = Default::default();
    for raw in CLAUSE_SPLIT.split(&lower) {
        let routes = route(raw);
        let text = clean_clause(raw);
        if text.is_empty() {
            continue;
        }
        for part in routes {
            assigned[part.index()].push(text.clone());
        }
    }
    PartTexts::from_fn(TextSource::Fallback, |p| {
        let clauses = &assigned[p.index()];
        if clauses.is_empty() {
            IDLE_PHRASE.to_string()
        } else {
            clauses.join(", then ")
        }
    })
}
