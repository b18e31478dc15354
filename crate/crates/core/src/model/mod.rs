//! The denoising network: six part encoders feeding a full-body optimizer,
//! plus the text encoders and contrastive towers that condition and
//! evaluate it.

pub mod conformer;
pub mod contrastive;
pub mod denoiser;
pub mod optimizer;
pub mod part_encoder;
pub mod text_encoder;
pub mod timestep;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conformer::ConformerBlock;
pub use contrastive::{
    contrastive_loss, BagOfWords, ContrastiveConfig, MotionTower, TextTower, TowerPair,
};
pub use denoiser::{Conditioning, Denoiser, LgtmNet};
pub use optimizer::{
    fuse_parts, AttentionBlock, AttentionEncoder, FullBodyLatent, FullBodyOptimizer, SmoothNet,
    SmoothingMode,
};
pub use part_encoder::{part_encode, PartEncoder, PartLatent};
pub use text_encoder::{
    EmbeddingTable, StubTextEncoder, TableTextEncoder, TextEmbedding, TextEncoder,
    DEFAULT_TEXT_DIM,
};
pub use timestep::{timestep_base, TimestepEmbedding};

/// Sub-block layout of the part encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    #[default]
    Conformer,
    /// Conformer without the convolution module.
    Transformer,
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conformer" => Ok(Self::Conformer),
            "transformer" => Ok(Self::Transformer),
            other => Err(Error::Config(format!("unknown block kind {other:?}"))),
        }
    }
}

/// How the full-body text enters the attention encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextFusion {
    /// Projected and added to every frame.
    #[default]
    Add,
    /// Projected and prepended as an extra sequence element.
    Token,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartEncoderConfig {
    pub latent_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub kernel_size: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub block_kind: BlockKind,
}

impl Default for PartEncoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            layers: 2,
            heads: 4,
            kernel_size: 7,
            ff_dim: 256,
            dropout: 0.1,
            block_kind: BlockKind::Conformer,
        }
    }
}

impl PartEncoderConfig {
    pub fn check(&self) -> Result<()> {
        if self.latent_dim == 0 || self.heads == 0 || !self.latent_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "latent_dim {} must be a positive multiple of heads {}",
                self.latent_dim, self.heads
            )));
        }
        if !self.latent_dim.is_multiple_of(2) {
            return Err(Error::Config("latent_dim must be even".into()));
        }
        if self.kernel_size == 0 {
            return Err(Error::Config("kernel_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub blocks: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub smooth_window: usize,
    pub smooth_layers: usize,
    pub smooth_hidden: usize,
    pub enable_optimizer: bool,
    pub enable_smoothnet: bool,
    pub text_fusion: TextFusion,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            heads: 4,
            ff_dim: 1024,
            dropout: 0.1,
            smooth_window: 8,
            smooth_layers: 3,
            smooth_hidden: 32,
            enable_optimizer: true,
            enable_smoothnet: true,
            text_fusion: TextFusion::Add,
        }
    }
}

impl OptimizerConfig {
    pub fn check(&self, width: usize) -> Result<()> {
        if self.heads == 0 || !width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "full-body width {width} not divisible by {} heads",
                self.heads
            )));
        }
        if self.smooth_window == 0 {
            return Err(Error::Config("smooth_window must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub text_dim: usize,
    /// Diffusion steps N; timestep embeddings reject `n >= num_steps`.
    pub num_steps: usize,
    pub part: PartEncoderConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            text_dim: DEFAULT_TEXT_DIM,
            num_steps: 1000,
            part: PartEncoderConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn full_width(&self) -> usize {
        crate::motion::PARTS.len() * self.part.latent_dim
    }

    pub fn check(&self) -> Result<()> {
        if self.text_dim == 0 {
            return Err(Error::Config("text_dim must be positive".into()));
        }
        if self.num_steps == 0 {
            return Err(Error::Config("num_steps must be positive".into()));
        }
        self.part.check()?;
        self.optimizer.check(self.full_width())
    }
}
