//! Per-part motion encoder: linear projection of the part features, additive
//! fusion of the projected text and timestep embeddings, and a Conformer
//! stack.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::model::{ConformerBlock, PartEncoderConfig, TimestepEmbedding};
use crate::motion::Part;
use crate::nn::{positional_encoding, Linear, Mode, Scope};

#[derive(Debug, Clone)]
pub struct PartEncoder {
    part: Part,
    in_proj: Linear,
    text_proj: Linear,
    timestep: TimestepEmbedding,
    blocks: Vec<ConformerBlock>,
    latent_dim: usize,
}

impl PartEncoder {
    pub fn new(
        s: &mut Scope,
        part: Part,
        cfg: &PartEncoderConfig,
        text_dim: usize,
        num_steps: usize,
    ) -> Result<Self> {
        cfg.check()?;
        let d = cfg.latent_dim;
        let blocks = (0..cfg.layers)
            .map(|i| ConformerBlock::new(&mut s.pp(format!("block{i}")), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            part,
            in_proj: Linear::new(&mut s.pp("in_proj"), part.width(), d)?,
            text_proj: Linear::new(&mut s.pp("text_proj"), text_dim, d)?,
            timestep: TimestepEmbedding::new(&mut s.pp("timestep"), num_steps, d, d)?,
            blocks,
            latent_dim: d,
        })
    }

    pub fn part(&self) -> Part {
        self.part
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// `m`: `(B, F, w_part)`, `text`: `(B, d_text)`, one step per batch row.
    /// Returns `(B, F, latent_dim)`.
    pub fn forward(&self, m: &Tensor, text: &Tensor, steps: &[usize], mode: Mode) -> Result<Tensor> {
        let (b, f, w) = m.dims3()?;
        if w != self.part.width() {
            return Err(Error::shape(format!(
                "{} encoder expects width {}, got {w}",
                self.part.name(),
                self.part.width()
            )));
        }
        if text.dims() != [b, self.text_proj.in_dim()] {
            return Err(Error::shape(format!(
                "{} encoder expects text ({b}, {}), got {:?}",
                self.part.name(),
                self.text_proj.in_dim(),
                text.dims()
            )));
        }
        if steps.len() != b {
            return Err(Error::shape(format!("{} steps for batch of {b}", steps.len())));
        }
        let cond = (self.text_proj.forward(text)? + self.timestep.forward(steps)?)?.unsqueeze(1)?;
        let pos = positional_encoding(f, self.latent_dim, m.dtype(), m.device())?.unsqueeze(0)?;
        let mut x = self.in_proj.forward(m)?.broadcast_add(&cond)?.broadcast_add(&pos)?;
        for block in &self.blocks {
            x = block.forward(&x, mode)?;
        }
        Ok(x)
    }
}

/// Latent code of one part for a single sequence.
#[derive(Debug, Clone)]
pub struct PartLatent {
    /// `(F, latent_dim)`.
    pub data: Tensor,
    pub part: Part,
    pub step: usize,
}

impl PartLatent {
    pub fn frames(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[1]
    }
}

/// Single-sequence convenience over [`PartEncoder::forward`]: `m_part` is
/// `(F, w_part)` and `text` a `d_text` vector.
pub fn part_encode(
    encoder: &PartEncoder,
    m_part: &Tensor,
    text: &Tensor,
    step: usize,
    mode: Mode,
) -> Result<PartLatent> {
    let data = encoder
        .forward(&m_part.unsqueeze(0)?, &text.unsqueeze(0)?, &[step], mode)?
        .squeeze(0)?;
    Ok(PartLatent {
        data,
        part: encoder.part(),
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    fn toy() -> PartEncoderConfig {
        PartEncoderConfig {
            layers: 1,
            ff_dim: 64,
            ..Default::default()
        }
    }

    #[test]
    fn head_latent_shape() {
        let mut store = ParamStore::new(DType::F32, 0);
        let enc = PartEncoder::new(&mut store.root(), Part::Head, &toy(), 128, 1000).unwrap();
        let m = Tensor::randn(0f32, 1.0, (10, 24), &Device::Cpu).unwrap();
        let t = Tensor::randn(0f32, 1.0, 128, &Device::Cpu).unwrap();
        let z = part_encode(&enc, &m, &t, 3, Mode::Eval).unwrap();
        assert_eq!((z.frames(), z.width()), (10, 128));
        let again = part_encode(&enc, &m, &t, 3, Mode::Eval).unwrap();
        let a: Vec<f32> = z.data.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = again.data.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut store = ParamStore::new(DType::F32, 0);
        let enc = PartEncoder::new(&mut store.root(), Part::Torso, &toy(), 128, 1000).unwrap();
        let m = Tensor::zeros((10, 24), DType::F32, &Device::Cpu).unwrap();
        let t = Tensor::zeros(128, DType::F32, &Device::Cpu).unwrap();
        assert!(part_encode(&enc, &m, &t, 0, Mode::Eval).is_err());
        let m = Tensor::zeros((10, 43), DType::F32, &Device::Cpu).unwrap();
        let t = Tensor::zeros(64, DType::F32, &Device::Cpu).unwrap();
        assert!(part_encode(&enc, &m, &t, 0, Mode::Eval).is_err());
    }
}
