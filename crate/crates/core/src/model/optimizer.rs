//! Full-body optimizer: concatenated part latents plus full-body text go
//! through an attention encoder (temporal attention, spatial feed-forward)
//! as a residual, then a temporal SmoothNet, then a linear head onto the
//! 263 motion features.

use candle_core::{IndexOp, Tensor, D};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, OptimizerConfig, PartLatent, TextFusion};
use crate::motion::{FEATURE_DIM, PARTS};
use crate::nn::{dropout, FeedForward, Init, LayerNorm, Linear, Mode, Scope, SelfAttention};

/// `(F, 6·latent_dim)` latent with slots in [`PARTS`] order: head,
/// left_arm, right_arm, torso, left_leg, right_leg.
#[derive(Debug, Clone)]
pub struct FullBodyLatent(pub Tensor);

/// Column-wise concatenation of six part latents in slot order. Latents may
/// be given in any order but must cover every part exactly once.
pub fn fuse_parts(latents: &[PartLatent]) -> Result<FullBodyLatent> {
    if latents.len() != PARTS.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} part latents, got {}",
            PARTS.len(),
            latents.len()
        )));
    }
    let mut slots: Vec<&Tensor> = Vec::with_capacity(PARTS.len());
    for part in PARTS {
        let found: Vec<&PartLatent> = latents.iter().filter(|l| l.part == part).collect();
        match found.as_slice() {
            [one] => slots.push(&one.data),
            [] => return Err(Error::InvalidArgument(format!("missing {} latent", part.name()))),
            _ => return Err(Error::InvalidArgument(format!("duplicate {} latent", part.name()))),
        }
    }
    let frames = slots[0].dims()[0];
    let width = slots[0].dims()[1];
    for (part, t) in PARTS.iter().zip(&slots) {
        if t.dims() != [frames, width] {
            return Err(Error::shape(format!(
                "{} latent is {:?}, expected ({frames}, {width})",
                part.name(),
                t.dims()
            )));
        }
    }
    Ok(FullBodyLatent(Tensor::cat(&slots, 1)?))
}

/// Pre-norm block: multi-head attention across frames, then a feed-forward
/// network across the latent columns of each frame.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    attn_norm: LayerNorm,
    attn: SelfAttention,
    ff_norm: LayerNorm,
    ff: FeedForward,
    dropout: f64,
}

impl AttentionBlock {
    pub fn new(s: &mut Scope, width: usize, heads: usize, ff_dim: usize, p: f64) -> Result<Self> {
        Ok(Self {
            attn_norm: LayerNorm::new(&mut s.pp("attn_norm"), width)?,
            attn: SelfAttention::new(&mut s.pp("attn"), width, heads)?,
            ff_norm: LayerNorm::new(&mut s.pp("ff_norm"), width)?,
            ff: FeedForward::new(&mut s.pp("ff"), width, ff_dim)?,
            dropout: p,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.attn.forward(&self.attn_norm.forward(x)?)?;
        let x = (x + dropout(&h, self.dropout, mode)?)?;
        let h = self.ff.forward(&self.ff_norm.forward(&x)?)?;
        Ok((&x + dropout(&h, self.dropout, mode)?)?)
    }

    /// The block with every query attending to itself only: for a single
    /// frame this is exactly [`AttentionBlock::forward`].
    pub fn forward_self_attending(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.value_path(&self.attn_norm.forward(x)?)?)?;
        Ok((&x + self.ff.forward(&self.ff_norm.forward(&x)?)?)?)
    }
}

/// Stacked attention blocks with a zero-initialised output projection, so
/// the residual it contributes starts at exactly zero.
#[derive(Debug, Clone)]
pub struct AttentionEncoder {
    text_proj: Linear,
    blocks: Vec<AttentionBlock>,
    out_proj: Linear,
    fusion: TextFusion,
}

impl AttentionEncoder {
    pub fn new(s: &mut Scope, width: usize, text_dim: usize, cfg: &OptimizerConfig) -> Result<Self> {
        cfg.check(width)?;
        let blocks = (0..cfg.blocks)
            .map(|i| {
                AttentionBlock::new(&mut s.pp(format!("block{i}")), width, cfg.heads, cfg.ff_dim, cfg.dropout)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            text_proj: Linear::new(&mut s.pp("text_proj"), text_dim, width)?,
            blocks,
            out_proj: Linear::zeros(&mut s.pp("out_proj"), width, width)?,
            fusion: cfg.text_fusion,
        })
    }

    pub fn blocks(&self) -> &[AttentionBlock] {
        &self.blocks
    }

    /// `z`: `(B, F, S)`, `text`: `(B, d_text)`. Returns the `(B, F, S)`
    /// delta to add onto `z`.
    pub fn forward(&self, z: &Tensor, text: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, f, s) = z.dims3()?;
        if text.dims() != [b, self.text_proj.in_dim()] {
            return Err(Error::shape(format!(
                "full-body text must be ({b}, {}), got {:?}",
                self.text_proj.in_dim(),
                text.dims()
            )));
        }
        if s != self.out_proj.in_dim() {
            return Err(Error::shape(format!(
                "attention encoder width {}, got {s}",
                self.out_proj.in_dim()
            )));
        }
        let zt = self.text_proj.forward(text)?.unsqueeze(1)?;
        let mut x = match self.fusion {
            TextFusion::Add => z.broadcast_add(&zt)?,
            TextFusion::Token => Tensor::cat(&[&zt, z], 1)?,
        };
        for block in &self.blocks {
            x = block.forward(&x, mode)?;
        }
        if self.fusion == TextFusion::Token {
            x = x.narrow(1, 1, f)?;
        }
        self.out_proj.forward(&x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothingMode {
    Learned,
    /// Fixed box filter over the window; no parameters involved.
    MovingAverage,
}

/// Temporal residual MLP applied independently to every latent channel.
///
/// Each output frame sees a window of `W` frames (`W/2 - 1` before, `W/2`
/// after for even `W`, clamped at the sequence ends). The window is encoded
/// to a hidden width, refined by residual SiLU layers, and decoded to a
/// single correction added to the centre frame. The decoder starts at zero,
/// so a fresh network is the identity.
#[derive(Debug, Clone)]
pub struct SmoothNet {
    window: usize,
    encode: Linear,
    layers: Vec<Linear>,
    decode: Linear,
    mode: SmoothingMode,
}

impl SmoothNet {
    pub fn new(s: &mut Scope, window: usize, hidden: usize, layers: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("smoothing window must be positive".into()));
        }
        Ok(Self {
            window,
            encode: Linear::new(&mut s.pp("encode"), window, hidden)?,
            layers: (0..layers)
                .map(|i| Linear::new(&mut s.pp(format!("res{i}")), hidden, hidden))
                .collect::<Result<Vec<_>>>()?,
            decode: Linear::with_init(&mut s.pp("decode"), hidden, 1, Init::Zeros)?,
            mode: SmoothingMode::Learned,
        })
    }

    pub fn with_mode(mut self, mode: SmoothingMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn before(&self) -> usize {
        (self.window - 1) / 2
    }

    /// Frame indices `(F·W)` gathered for every output frame.
    fn window_indices(&self, frames: usize) -> Vec<u32> {
        let before = self.before() as isize;
        (0..frames as isize)
            .flat_map(|t| {
                (0..self.window as isize)
                    .map(move |k| (t - before + k).clamp(0, frames as isize - 1) as u32)
            })
            .collect()
    }

    /// `(B, F, S)` → `(B, F, S)`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let (b, f, s) = z.dims3()?;
        let idx = Tensor::from_vec(self.window_indices(f), f * self.window, z.device())?;
        // (B, F, W, S) -> (B, F, S, W): one window vector per frame and channel.
        let windows = z
            .index_select(&idx, 1)?
            .reshape((b, f, self.window, s))?
            .transpose(2, 3)?
            .contiguous()?;
        match self.mode {
            SmoothingMode::MovingAverage => Ok(windows.mean(D::Minus1)?),
            SmoothingMode::Learned => {
                let mut h = self.encode.forward(&windows)?.silu()?;
                for layer in &self.layers {
                    h = (&h + layer.forward(&h)?.silu()?)?;
                }
                let correction = self.decode.forward(&h)?.squeeze(D::Minus1)?;
                Ok((z + correction)?)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FullBodyOptimizer {
    attention: AttentionEncoder,
    smooth: SmoothNet,
    head: Linear,
    enable_optimizer: bool,
    enable_smoothnet: bool,
}

impl FullBodyOptimizer {
    pub fn new(s: &mut Scope, cfg: &ModelConfig) -> Result<Self> {
        let width = cfg.full_width();
        let o = &cfg.optimizer;
        Ok(Self {
            attention: AttentionEncoder::new(&mut s.pp("attention"), width, cfg.text_dim, o)?,
            smooth: SmoothNet::new(&mut s.pp("smooth"), o.smooth_window, o.smooth_hidden, o.smooth_layers)?,
            head: Linear::new(&mut s.pp("head"), width, FEATURE_DIM)?,
            enable_optimizer: o.enable_optimizer,
            enable_smoothnet: o.enable_smoothnet,
        })
    }

    pub fn attention(&self) -> &AttentionEncoder {
        &self.attention
    }

    pub fn smooth(&self) -> &SmoothNet {
        &self.smooth
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// Everything before the output head: `SmoothNet(z + AttentionEncoder(z,
    /// text))`, with either stage skippable by configuration.
    pub fn refine(&self, z: &Tensor, text: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut z = z.clone();
        if self.enable_optimizer {
            z = (&z + self.attention.forward(&z, text, mode)?)?;
        }
        if self.enable_smoothnet {
            z = self.smooth.forward(&z)?;
        }
        Ok(z)
    }

    /// `(B, F, S)` latent and `(B, d_text)` text → `(B, F, 263)` predicted
    /// clean motion in normalised feature space.
    pub fn forward(&self, z: &Tensor, text: &Tensor, mode: Mode) -> Result<Tensor> {
        self.head.forward(&self.refine(z, text, mode)?)
    }

    /// Single-sequence form over fused part latents: returns `(F, 263)`.
    pub fn optimize(&self, z: &FullBodyLatent, text: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self
            .forward(&z.0.unsqueeze(0)?, &text.unsqueeze(0)?, mode)?
            .i(0)?)
    }
}
