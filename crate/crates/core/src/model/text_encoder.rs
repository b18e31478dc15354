//! Pluggable text encoders producing unit-norm embeddings.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_TEXT_DIM: usize = 128;

/// Embedding of one text by one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: Vec<f32>,
    /// Which encoder produced it: a part name or `full_body`.
    pub encoder: String,
}

impl TextEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn cosine(&self, other: &TextEmbedding) -> f32 {
        let dot: f32 = self.vector.iter().zip(&other.vector).map(|(a, b)| a * b).sum();
        let na: f32 = self.vector.iter().map(|a| a * a).sum::<f32>().sqrt();
        let nb: f32 = other.vector.iter().map(|a| a * a).sum::<f32>().sqrt();
        dot / (na * nb)
    }
}

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Encoder identity, e.g. `left_arm` or `full_body`.
    fn identity(&self) -> &str;

    fn encode(&self, text: &str) -> Result<TextEmbedding>;

    /// Frozen encoders are treated as constants during training.
    fn is_frozen(&self) -> bool {
        true
    }
}

pub(crate) fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Hashes the text into a seed and draws a fixed Gaussian direction.
/// Network-free and deterministic; unrelated texts get nearly orthogonal
/// codes.
#[derive(Debug, Clone)]
pub struct StubTextEncoder {
    identity: String,
    dim: usize,
}

impl StubTextEncoder {
    pub fn new(identity: impl Into<String>, dim: usize) -> Self {
        Self {
            identity: identity.into(),
            dim,
        }
    }
}

impl TextEncoder for StubTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> &str {
        &self.identity
    }

    fn encode(&self, text: &str) -> Result<TextEmbedding> {
        if text.trim().is_empty() {
            return Err(Error::InvalidArgument("cannot embed empty text".into()));
        }
        let digest = Sha256::new()
            .chain_update(self.identity.as_bytes())
            .chain_update([0])
            .chain_update(text.trim().to_lowercase().as_bytes())
            .finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vector: Vec<f32> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        normalize(&mut vector);
        Ok(TextEmbedding {
            vector,
            encoder: self.identity.clone(),
        })
    }
}

/// On-disk table of precomputed embeddings: `{"dim": d, "embeddings":
/// {"text": [...]}}`. This is how externally computed encodings (CLIP or a
/// pretrained retrieval model) plug in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub embeddings: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let table: EmbeddingTable = serde_json::from_slice(&bytes)?;
        if let Some((k, v)) = table.embeddings.iter().find(|(_, v)| v.len() != table.dim) {
            return Err(Error::shape(format!(
                "embedding for {k:?} has {} values, table dim {}",
                v.len(),
                table.dim
            )));
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TableTextEncoder {
    identity: String,
    table: std::sync::Arc<EmbeddingTable>,
}

impl TableTextEncoder {
    pub fn new(identity: impl Into<String>, table: std::sync::Arc<EmbeddingTable>) -> Self {
        Self {
            identity: identity.into(),
            table,
        }
    }
}

impl TextEncoder for TableTextEncoder {
    fn dim(&self) -> usize {
        self.table.dim
    }

    fn identity(&self) -> &str {
        &self.identity
    }

    fn encode(&self, text: &str) -> Result<TextEmbedding> {
        let key = text.trim();
        let mut vector = self
            .table
            .embeddings
            .get(key)
            .or_else(|| self.table.embeddings.get(&key.to_lowercase()))
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no external embedding for {key:?}")))?;
        normalize(&mut vector);
        Ok(TextEmbedding {
            vector,
            encoder: self.identity.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_is_deterministic_and_unit_norm() {
        let enc = StubTextEncoder::new("head", 128);
        let a = enc.encode("nods").unwrap();
        assert_eq!(a, enc.encode("nods").unwrap());
        let norm: f32 = a.vector.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        assert_eq!(a.encoder, "head");
    }

    #[test]
    fn stub_separates_texts_and_encoders() {
        let enc = StubTextEncoder::new("head", 128);
        let a = enc.encode("nods").unwrap();
        let b = enc.encode("looks around").unwrap();
        assert!(a.cosine(&b) < 1.0 - 1e-3);
        let other = StubTextEncoder::new("torso", 128).encode("nods").unwrap();
        assert_ne!(a.vector, other.vector);
        assert!(enc.encode(" ").is_err());
    }

    #[test]
    fn table_lookup() {
        let mut embeddings = HashMap::new();
        embeddings.insert("waves".to_string(), vec![3.0, 4.0]);
        let table = std::sync::Arc::new(EmbeddingTable { dim: 2, embeddings });
        let enc = TableTextEncoder::new("right_arm", table);
        assert_eq!(enc.encode("waves").unwrap().vector, vec![0.6, 0.8]);
        assert!(enc.encode("kicks").is_err());
    }
}
