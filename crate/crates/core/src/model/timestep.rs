//! Diffusion-step conditioning: sinusoidal encoding plus a learned
//! two-layer projection.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{sinusoid, Linear, Scope};

/// Sinusoidal encoding of step `n` before any projection.
pub fn timestep_base(n: usize, num_steps: usize, dim: usize) -> Result<Vec<f64>> {
    if n >= num_steps {
        return Err(Error::InvalidArgument(format!(
            "diffusion step {n} out of range 0..{num_steps}"
        )));
    }
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!("timestep dim {dim} must be even and positive")));
    }
    Ok(sinusoid(n as f64, dim))
}

#[derive(Debug, Clone)]
pub struct TimestepEmbedding {
    num_steps: usize,
    base_dim: usize,
    up: Linear,
    down: Linear,
}

impl TimestepEmbedding {
    pub fn new(s: &mut Scope, num_steps: usize, base_dim: usize, out_dim: usize) -> Result<Self> {
        if base_dim == 0 || !base_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "timestep dim {base_dim} must be even and positive"
            )));
        }
        Ok(Self {
            num_steps,
            base_dim,
            up: Linear::new(&mut s.pp("up"), base_dim, out_dim)?,
            down: Linear::new(&mut s.pp("down"), out_dim, out_dim)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.down.out_dim()
    }

    /// `(B, out_dim)` embeddings for one step per batch element.
    pub fn forward(&self, steps: &[usize]) -> Result<Tensor> {
        let w = self.up.weight();
        let mut data = Vec::with_capacity(steps.len() * self.base_dim);
        for &n in steps {
            data.extend(timestep_base(n, self.num_steps, self.base_dim)?);
        }
        let base = Tensor::from_vec(data, (steps.len(), self.base_dim), w.device())?
            .to_dtype(w.dtype())?;
        self.down.forward(&self.up.forward(&base)?.silu()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::DType;

    #[test]
    fn step_zero_base_vector() {
        let v = timestep_base(0, 1000, 16).unwrap();
        assert!(v[..8].iter().all(|&c| c == 1.0));
        assert!(v[8..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn distinct_steps_give_distinct_bases() {
        assert_ne!(
            timestep_base(3, 1000, 16).unwrap(),
            timestep_base(4, 1000, 16).unwrap()
        );
    }

    #[test]
    fn out_of_range_step_is_rejected() {
        let mut store = ParamStore::new(DType::F32, 0);
        let emb = TimestepEmbedding::new(&mut store.root(), 10, 8, 16).unwrap();
        assert_eq!(emb.forward(&[0, 9]).unwrap().dims(), &[2, 16]);
        assert!(emb.forward(&[10]).is_err());
        assert!(TimestepEmbedding::new(&mut store.root().pp("odd"), 10, 7, 16).is_err());
    }
}
