//! Paired motion/text embedding towers trained with a symmetric contrastive
//! objective. They serve both as the evaluator for generated motion and as
//! a trainable stand-in for pretrained retrieval text encoders.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::text_encoder::{normalize, TextEmbedding, TextEncoder};
use crate::nn::{Linear, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    /// Hash buckets of the bag-of-words text featurizer.
    pub buckets: usize,
    pub temperature: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Random crop length used as augmentation during training.
    pub crop_frames: usize,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            hidden: 128,
            buckets: 512,
            temperature: 0.1,
            steps: 300,
            batch_size: 16,
            learning_rate: 2e-3,
            crop_frames: 40,
            seed: 0,
        }
    }
}

/// Hashed unigram + bigram counts, L2-normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BagOfWords {
    pub buckets: usize,
}

impl BagOfWords {
    fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let h = u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"));
        (h % self.buckets as u64) as usize
    }

    pub fn featurize(&self, text: &str) -> Vec<f32> {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let mut v = vec![0f32; self.buckets];
        for w in &words {
            v[self.bucket(w)] += 1.0;
        }
        for pair in words.windows(2) {
            v[self.bucket(&format!("{} {}", pair[0], pair[1]))] += 1.0;
        }
        normalize(&mut v);
        v
    }
}

#[derive(Debug, Clone)]
pub struct TextTower {
    bow: BagOfWords,
    hidden: Linear,
    out: Linear,
}

impl TextTower {
    pub fn new(s: &mut Scope, cfg: &ContrastiveConfig) -> Result<Self> {
        Ok(Self {
            bow: BagOfWords { buckets: cfg.buckets },
            hidden: Linear::new(&mut s.pp("hidden"), cfg.buckets, cfg.hidden)?,
            out: Linear::new(&mut s.pp("out"), cfg.hidden, cfg.embed_dim)?,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.out.out_dim()
    }

    pub fn featurize(&self, texts: &[&str]) -> Result<Tensor> {
        let w = self.hidden.weight();
        let data: Vec<f32> = texts.iter().flat_map(|t| self.bow.featurize(t)).collect();
        Ok(Tensor::from_vec(data, (texts.len(), self.bow.buckets), w.device())?.to_dtype(w.dtype())?)
    }

    /// `(B, buckets)` features → `(B, embed_dim)` unit vectors.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let h = self.hidden.forward(features)?.silu()?;
        unit_rows(&self.out.forward(&h)?)
    }
}

/// Per-frame MLP, mean and standard-deviation pooling over time, linear
/// projection, normalisation.
#[derive(Debug, Clone)]
pub struct MotionTower {
    frame_in: Linear,
    frame_mid: Linear,
    out: Linear,
}

impl MotionTower {
    pub fn new(s: &mut Scope, input_width: usize, cfg: &ContrastiveConfig) -> Result<Self> {
        Ok(Self {
            frame_in: Linear::new(&mut s.pp("frame_in"), input_width, cfg.hidden)?,
            frame_mid: Linear::new(&mut s.pp("frame_mid"), cfg.hidden, cfg.hidden)?,
            out: Linear::new(&mut s.pp("out"), 2 * cfg.hidden, cfg.embed_dim)?,
        })
    }

    pub fn input_width(&self) -> usize {
        self.frame_in.in_dim()
    }

    /// `(B, F, w)` normalised features → `(B, embed_dim)` unit vectors.
    pub fn forward(&self, m: &Tensor) -> Result<Tensor> {
        let h = self.frame_in.forward(m)?.silu()?;
        let h = (&h + self.frame_mid.forward(&h)?.silu()?)?;
        let mean = h.mean_keepdim(1)?;
        let std = (h.broadcast_sub(&mean)?.sqr()?.mean(1)? + 1e-6)?.sqrt()?;
        let pooled = Tensor::cat(&[&mean.squeeze(1)?, &std], D::Minus1)?;
        unit_rows(&self.out.forward(&pooled)?)
    }
}

fn unit_rows(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// A motion tower and a text tower sharing one embedding space.
#[derive(Debug, Clone)]
pub struct TowerPair {
    pub identity: String,
    pub motion: MotionTower,
    pub text: TextTower,
}

impl TowerPair {
    pub fn new(s: &mut Scope, identity: &str, input_width: usize, cfg: &ContrastiveConfig) -> Result<Self> {
        Ok(Self {
            identity: identity.to_string(),
            motion: MotionTower::new(&mut s.pp("motion"), input_width, cfg)?,
            text: TextTower::new(&mut s.pp("text"), cfg)?,
        })
    }

    pub fn embed_texts(&self, texts: &[&str]) -> Result<Tensor> {
        self.text.forward(&self.text.featurize(texts)?)
    }
}

impl TextEncoder for TowerPair {
    fn dim(&self) -> usize {
        self.text.embed_dim()
    }

    fn identity(&self) -> &str {
        &self.identity
    }

    fn encode(&self, text: &str) -> Result<TextEmbedding> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("cannot embed empty text".into()));
        }
        let v = self.embed_texts(&[text])?.squeeze(0)?.to_dtype(candle_core::DType::F32)?;
        Ok(TextEmbedding {
            vector: v.to_vec1()?,
            encoder: self.identity.clone(),
        })
    }
}

/// Symmetric temperature-scaled cross-entropy between unit embeddings.
///
/// `groups[i]` identifies row `i`'s text; rows sharing a text are all
/// treated as positives for each other (soft targets spread uniformly), so
/// duplicate captions do not fight each other.
pub fn contrastive_loss(motion: &Tensor, text: &Tensor, groups: &[usize], temperature: f64) -> Result<Tensor> {
    let b = motion.dims2()?.0;
    if text.dims2()?.0 != b || groups.len() != b {
        return Err(Error::shape("contrastive batch misaligned"));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("empty contrastive batch".into()));
    }
    let mut targets = vec![0f64; b * b];
    for i in 0..b {
        let same: Vec<usize> = (0..b).filter(|&j| groups[j] == groups[i]).collect();
        for &j in &same {
            targets[i * b + j] = 1.0 / same.len() as f64;
        }
    }
    let targets = Tensor::from_vec(targets, (b, b), motion.device())?.to_dtype(motion.dtype())?;
    let logits = (motion.matmul(&text.t()?)? / temperature)?;
    let ce = |l: &Tensor| -> Result<Tensor> {
        let logp = candle_nn::ops::log_softmax(l, D::Minus1)?;
        Ok((logp.mul(&targets)?.sum_all()?.neg()? / b as f64)?)
    };
    // Targets are symmetric, so the transposed direction reuses them.
    Ok(((ce(&logits)? + ce(&logits.t()?)?)? * 0.5)?)
}
