//! Training configuration: a JSON document whose every field can be
//! overridden with dotted `key=value` assignments.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};
use crate::model::{BlockKind, ContrastiveConfig, ModelConfig};

/// Text encoder used to condition the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderKind {
    /// Hash-seeded fixed vectors.
    Stub,
    /// Text towers of contrastively trained evaluation encoders.
    #[default]
    ToyContrastive,
    /// Precomputed embeddings from an [`crate::model::EmbeddingTable`].
    External,
}

impl std::str::FromStr for TextEncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stub" => Ok(Self::Stub),
            "toy_contrastive" => Ok(Self::ToyContrastive),
            "external" => Ok(Self::External),
            other => Err(Error::Config(format!("unknown text encoder {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleKind,
    pub learning_rate: f64,
    /// Floor of the cosine decay.
    pub min_learning_rate: f64,
    /// Fraction of `max_steps` spent in linear warm-up.
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Training crops, in frames.
    pub crop_frames: usize,
    pub seed: u64,
    pub text_encoder: TextEncoderKind,
    /// Evaluation-encoder checkpoint supplying text towers for
    /// `toy_contrastive`; trained on the corpus when absent.
    pub text_encoder_checkpoint: Option<PathBuf>,
    /// Embedding table for `external`.
    pub text_table: Option<PathBuf>,
    /// Used when text towers are trained in-process.
    pub contrastive: ContrastiveConfig,
    /// Intermediate checkpoint cadence in steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Restrict training to the first N clips of the train split.
    pub max_clips: Option<usize>,
    /// Assemble batches on the worker pool. Results are identical either
    /// way; disable for a strictly single-threaded run.
    pub parallel_data: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: ScheduleKind::Cosine,
            learning_rate: 1e-4,
            min_learning_rate: 1e-6,
            warmup_fraction: 0.05,
            weight_decay: 0.01,
            batch_size: 8,
            max_steps: 2000,
            crop_frames: 40,
            seed: 0,
            text_encoder: TextEncoderKind::ToyContrastive,
            text_encoder_checkpoint: None,
            text_table: None,
            contrastive: ContrastiveConfig::default(),
            checkpoint_every: 0,
            max_clips: None,
            parallel_data: true,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn check(&self) -> Result<()> {
        self.model.check()?;
        let positive = [
            ("learning_rate", self.learning_rate),
            ("batch_size", self.batch_size as f64),
            ("max_steps", self.max_steps as f64),
            ("crop_frames", self.crop_frames as f64),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must be in [0, 1)".into()));
        }
        if self.min_learning_rate < 0.0 || self.min_learning_rate > self.learning_rate {
            return Err(Error::Config("min_learning_rate must be in [0, learning_rate]".into()));
        }
        if self.text_encoder == TextEncoderKind::External && self.text_table.is_none() {
            return Err(Error::Config("external text encoder needs text_table".into()));
        }
        Ok(())
    }

    /// Warm-up from 0 to the peak over the first `warmup_fraction` of the
    /// run, then cosine decay to `min_learning_rate`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let warm = (self.warmup_fraction * self.max_steps as f64).ceil() as usize;
        if step < warm {
            return self.learning_rate * (step + 1) as f64 / warm as f64;
        }
        let span = (self.max_steps - warm).max(1) as f64;
        let progress = ((step - warm) as f64 / span).min(1.0);
        self.min_learning_rate
            + (self.learning_rate - self.min_learning_rate) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn block_kind(&self) -> BlockKind {
        self.model.part.block_kind
    }

    /// Applies `key=value` overrides; see [`apply_override`].
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(&self)?;
        for o in overrides {
            apply_override(&mut doc, o.as_ref())?;
        }
        let cfg: TrainConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }
}

/// Sets a dotted path (`model.part.layers=3`) in a JSON document. The value
/// is parsed as JSON when possible and taken as a string otherwise. The
/// path must already exist, so typos are caught.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.trim().split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part} is not inside an object")))?;
        if !obj.contains_key(*part) {
            return Err(Error::Config(format!("unknown config field {key}")));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    unreachable!("split always yields at least one part")
}
