//! The complete denoising network and the interface the sampler drives.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::model::{FullBodyOptimizer, ModelConfig, PartEncoder};
use crate::motion::{SkeletonMap, FEATURE_DIM, PARTS};
use crate::nn::{Mode, Scope};

/// Text conditioning for a batch: one `(B, d_text)` tensor per part (in
/// [`PARTS`] order) and one for the full-body caption.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub parts: [Tensor; 6],
    pub full: Tensor,
}

impl Conditioning {
    pub fn batch(&self) -> usize {
        self.full.dims()[0]
    }

    /// Rows `idx` of every conditioning tensor.
    pub fn select(&self, idx: &[u32]) -> Result<Self> {
        let t = Tensor::new(idx, self.full.device())?;
        let pick = |x: &Tensor| -> Result<Tensor> { Ok(x.index_select(&t, 0)?) };
        Ok(Self {
            parts: [
                pick(&self.parts[0])?,
                pick(&self.parts[1])?,
                pick(&self.parts[2])?,
                pick(&self.parts[3])?,
                pick(&self.parts[4])?,
                pick(&self.parts[5])?,
            ],
            full: pick(&self.full)?,
        })
    }
}

/// Predicts the clean motion from a noisy one.
pub trait Denoiser {
    /// `x_t`: `(B, F, 263)` normalised noisy motion, one step per batch row.
    /// Returns the `(B, F, 263)` clean-motion estimate.
    fn predict_x0(&self, x_t: &Tensor, steps: &[usize], cond: &Conditioning, mode: Mode) -> Result<Tensor>;
}

/// Six part encoders fed by column gathers of the input, concatenated and
/// refined by the full-body optimizer.
#[derive(Debug, Clone)]
pub struct LgtmNet {
    encoders: Vec<PartEncoder>,
    columns: Vec<Tensor>,
    optimizer: FullBodyOptimizer,
    config: ModelConfig,
}

impl LgtmNet {
    pub fn new(s: &mut Scope, cfg: &ModelConfig) -> Result<Self> {
        cfg.check()?;
        let skel = SkeletonMap::standard();
        let mut encoders = Vec::with_capacity(PARTS.len());
        let mut columns = Vec::with_capacity(PARTS.len());
        for part in PARTS {
            encoders.push(PartEncoder::new(
                &mut s.pp(format!("parts.{}", part.name())),
                part,
                &cfg.part,
                cfg.text_dim,
                cfg.num_steps,
            )?);
            let cols: Vec<u32> = skel.columns(part).iter().map(|&c| c as u32).collect();
            columns.push(Tensor::new(cols.as_slice(), &Device::Cpu)?);
        }
        Ok(Self {
            encoders,
            columns,
            optimizer: FullBodyOptimizer::new(&mut s.pp("optimizer"), cfg)?,
            config: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoders(&self) -> &[PartEncoder] {
        &self.encoders
    }

    pub fn optimizer(&self) -> &FullBodyOptimizer {
        &self.optimizer
    }

    /// The six `(B, F, latent_dim)` part latents, in [`PARTS`] order. Each
    /// depends only on its own part's columns and text.
    pub fn part_latents(
        &self,
        x_t: &Tensor,
        steps: &[usize],
        cond: &Conditioning,
        mode: Mode,
    ) -> Result<Vec<Tensor>> {
        let (b, _, w) = x_t.dims3()?;
        if w != FEATURE_DIM {
            return Err(Error::shape(format!("denoiser expects width {FEATURE_DIM}, got {w}")));
        }
        if cond.batch() != b {
            return Err(Error::shape(format!(
                "conditioning batch {} for motion batch {b}",
                cond.batch()
            )));
        }
        self.encoders
            .iter()
            .zip(&self.columns)
            .zip(&cond.parts)
            .map(|((enc, cols), text)| enc.forward(&x_t.index_select(cols, 2)?, text, steps, mode))
            .collect()
    }
}

impl Denoiser for LgtmNet {
    fn predict_x0(&self, x_t: &Tensor, steps: &[usize], cond: &Conditioning, mode: Mode) -> Result<Tensor> {
        let latents = self.part_latents(x_t, steps, cond, mode)?;
        let z = Tensor::cat(&latents, 2)?;
        self.optimizer.forward(&z, &cond.full, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::DType;

    fn small() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.part.latent_dim = 16;
        cfg.part.heads = 2;
        cfg.part.layers = 1;
        cfg.part.ff_dim = 32;
        cfg.text_dim = 8;
        cfg.optimizer.heads = 2;
        cfg.optimizer.blocks = 1;
        cfg.optimizer.ff_dim = 32;
        cfg
    }

    fn cond(b: usize, seed: f64) -> Conditioning {
        let t = |k: f64| Tensor::full((seed + k) as f32, (b, 8), &Device::Cpu).unwrap();
        Conditioning {
            parts: [t(0.0), t(0.1), t(0.2), t(0.3), t(0.4), t(0.5)],
            full: t(0.6),
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let mut store = ParamStore::new(DType::F32, 0);
        let net = LgtmNet::new(&mut store.root(), &small()).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 10, FEATURE_DIM), &Device::Cpu).unwrap();
        let c = cond(2, 0.0);
        let a = net.predict_x0(&x, &[1, 5], &c, Mode::Eval).unwrap();
        assert_eq!(a.dims(), &[2, 10, FEATURE_DIM]);
        let b = net.predict_x0(&x, &[1, 5], &c, Mode::Eval).unwrap();
        let a: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = b.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn left_arm_text_only_moves_left_arm_latent() {
        let mut store = ParamStore::new(DType::F32, 1);
        let net = LgtmNet::new(&mut store.root(), &small()).unwrap();
        let x = Tensor::randn(0f32, 1.0, (1, 6, FEATURE_DIM), &Device::Cpu).unwrap();
        let base = cond(1, 0.0);
        let mut changed = base.clone();
        changed.parts[1] = Tensor::full(-3f32, (1, 8), &Device::Cpu).unwrap();
        let la = net.part_latents(&x, &[7], &base, Mode::Eval).unwrap();
        let lb = net.part_latents(&x, &[7], &changed, Mode::Eval).unwrap();
        for (i, (a, b)) in la.iter().zip(&lb).enumerate() {
            let a: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f32> = b.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(a == b, i != 1, "part {i}");
        }
        let ya = net.predict_x0(&x, &[7], &base, Mode::Eval).unwrap();
        let yb = net.predict_x0(&x, &[7], &changed, Mode::Eval).unwrap();
        let ya: Vec<f32> = ya.flatten_all().unwrap().to_vec1().unwrap();
        let yb: Vec<f32> = yb.flatten_all().unwrap().to_vec1().unwrap();
        assert_ne!(ya, yb);
    }
}
