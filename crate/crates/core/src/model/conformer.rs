//! Conformer block: half-step feed-forward, self-attention, depthwise
//! temporal convolution, half-step feed-forward, each pre-normalised with a
//! residual connection, followed by a closing layer norm.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::model::{BlockKind, PartEncoderConfig};
use crate::nn::{dropout, sigmoid, FeedForward, Init, LayerNorm, Linear, Mode, Scope, SelfAttention};

/// Per-channel temporal convolution with "same" zero padding over
/// dimension 1 of a `(B, T, d)` tensor.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    /// `(K, d)`: one K-tap filter per channel.
    weight: Tensor,
    bias: Tensor,
}

impl DepthwiseConv {
    pub fn new(s: &mut Scope, dim: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            weight: s.param("weight", &[kernel, dim], Init::FanIn(kernel))?,
            bias: s.param("bias", &[dim], Init::Zeros)?,
        })
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, t, _) = x.dims3()?;
        let k = self.kernel();
        let left = k / 2;
        let padded = x.pad_with_zeros(1, left, k - 1 - left)?;
        let mut acc = self.bias.broadcast_as(x.shape())?.contiguous()?;
        for tap in 0..k {
            let w = self.weight.get(tap)?;
            acc = (acc + padded.narrow(1, tap, t)?.broadcast_mul(&w)?)?;
        }
        Ok(acc)
    }
}

/// Pointwise expansion, GLU gate, depthwise convolution, normalisation,
/// SiLU and pointwise projection.
#[derive(Debug, Clone)]
pub struct ConvModule {
    norm: LayerNorm,
    expand: Linear,
    depthwise: DepthwiseConv,
    mid_norm: LayerNorm,
    project: Linear,
}

impl ConvModule {
    pub fn new(s: &mut Scope, dim: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&mut s.pp("norm"), dim)?,
            expand: Linear::new(&mut s.pp("expand"), dim, 2 * dim)?,
            depthwise: DepthwiseConv::new(&mut s.pp("depthwise"), dim, kernel)?,
            mid_norm: LayerNorm::new(&mut s.pp("mid_norm"), dim)?,
            project: Linear::new(&mut s.pp("project"), dim, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.expand.forward(&self.norm.forward(x)?)?;
        let dim = h.dim(D::Minus1)? / 2;
        let gated = h.narrow(D::Minus1, 0, dim)?.mul(&sigmoid(&h.narrow(D::Minus1, dim, dim)?)?)?;
        let h = self.depthwise.forward(&gated)?;
        let h = self.mid_norm.forward(&h)?.silu()?;
        self.project.forward(&h)
    }
}

#[derive(Debug, Clone)]
struct Residual<T> {
    norm: LayerNorm,
    inner: T,
}

#[derive(Debug, Clone)]
pub struct ConformerBlock {
    ff_in: Residual<FeedForward>,
    attn: Residual<SelfAttention>,
    conv: Option<ConvModule>,
    ff_out: Residual<FeedForward>,
    final_norm: LayerNorm,
    dropout: f64,
}

impl ConformerBlock {
    pub fn new(s: &mut Scope, cfg: &PartEncoderConfig) -> Result<Self> {
        cfg.check()?;
        let d = cfg.latent_dim;
        let ff = |s: &mut Scope, name: &str| -> Result<Residual<FeedForward>> {
            let mut s = s.pp(name);
            Ok(Residual {
                norm: LayerNorm::new(&mut s.pp("norm"), d)?,
                inner: FeedForward::new(&mut s.pp("ff"), d, cfg.ff_dim)?,
            })
        };
        let ff_in = ff(s, "ff_in")?;
        let attn = {
            let mut s = s.pp("attn");
            Residual {
                norm: LayerNorm::new(&mut s.pp("norm"), d)?,
                inner: SelfAttention::new(&mut s.pp("mhsa"), d, cfg.heads)?,
            }
        };
        let conv = match cfg.block_kind {
            BlockKind::Conformer => Some(ConvModule::new(&mut s.pp("conv"), d, cfg.kernel_size)?),
            BlockKind::Transformer => None,
        };
        let ff_out = ff(s, "ff_out")?;
        Ok(Self {
            ff_in,
            attn,
            conv,
            ff_out,
            final_norm: LayerNorm::new(&mut s.pp("final_norm"), d)?,
            dropout: cfg.dropout,
        })
    }

    pub fn has_conv(&self) -> bool {
        self.conv.is_some()
    }

    /// Shape-preserving forward over a `(B, T, d)` tensor.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if x.rank() != 3 {
            return Err(Error::shape(format!("conformer expects (B, T, d), got {:?}", x.dims())));
        }
        let p = self.dropout;
        let h = self.ff_in.inner.forward(&self.ff_in.norm.forward(x)?)?;
        let x = (x + (dropout(&h, p, mode)? * 0.5)?)?;
        let h = self.attn.inner.forward(&self.attn.norm.forward(&x)?)?;
        let mut x = (&x + dropout(&h, p, mode)?)?;
        if let Some(conv) = &self.conv {
            x = (&x + dropout(&conv.forward(&x)?, p, mode)?)?;
        }
        let h = self.ff_out.inner.forward(&self.ff_out.norm.forward(&x)?)?;
        let x = (x + (dropout(&h, p, mode)? * 0.5)?)?;
        self.final_norm.forward(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{numeric_grad, relative_error};
    use crate::nn::ParamStore;
    use candle_core::{DType, Device, Var};

    fn toy(kind: BlockKind) -> PartEncoderConfig {
        PartEncoderConfig {
            latent_dim: 8,
            layers: 1,
            heads: 2,
            kernel_size: 3,
            ff_dim: 16,
            dropout: 0.0,
            block_kind: kind,
        }
    }

    #[test]
    fn shape_is_preserved() {
        let mut store = ParamStore::new(DType::F32, 0);
        let block = ConformerBlock::new(&mut store.root(), &toy(BlockKind::Conformer)).unwrap();
        for t in [1, 2, 9] {
            let x = Tensor::randn(0f32, 1.0, (3, t, 8), &Device::Cpu).unwrap();
            assert_eq!(block.forward(&x, Mode::Eval).unwrap().dims(), &[3, t, 8]);
        }
    }

    #[test]
    fn transformer_mode_has_fewer_parameters() {
        let mut a = ParamStore::new(DType::F32, 0);
        ConformerBlock::new(&mut a.root(), &toy(BlockKind::Conformer)).unwrap();
        let mut b = ParamStore::new(DType::F32, 0);
        let block = ConformerBlock::new(&mut b.root(), &toy(BlockKind::Transformer)).unwrap();
        assert!(!block.has_conv());
        assert!(b.num_params() < a.num_params());
    }

    #[test]
    fn depthwise_conv_matches_direct_sum() {
        let mut store = ParamStore::new(DType::F64, 5);
        let conv = DepthwiseConv::new(&mut store.root(), 2, 3).unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 4, 2), &Device::Cpu).unwrap();
        let y: Vec<Vec<f64>> = conv.forward(&x).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        let xv: Vec<Vec<f64>> = x.squeeze(0).unwrap().to_vec2().unwrap();
        let w: Vec<Vec<f64>> = conv.weight.to_vec2().unwrap();
        for t in 0..4 {
            for c in 0..2 {
                let mut expect = 0.0;
                for k in 0..3 {
                    let src = t as isize + k as isize - 1;
                    if (0..4).contains(&src) {
                        expect += w[k][c] * xv[src as usize][c];
                    }
                }
                assert!((y[t][c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut store = ParamStore::new(DType::F64, 11);
        let block = ConformerBlock::new(&mut store.root(), &toy(BlockKind::Conformer)).unwrap();
        let x0 = Tensor::randn(0f64, 1.0, (1, 2, 8), &Device::Cpu).unwrap();
        let probe = Tensor::randn(0f64, 1.0, (1, 2, 8), &Device::Cpu).unwrap();
        let loss = |x: &Tensor| -> Result<Tensor> {
            Ok(block.forward(x, Mode::Eval)?.mul(&probe)?.sum_all()?)
        };
        let var = Var::from_tensor(&x0).unwrap();
        let grads = loss(var.as_tensor()).unwrap().backward().unwrap();
        let analytic: Vec<f64> = grads.get(&var).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let numeric = numeric_grad(&x0, 1e-5, |x| Ok(loss(x)?.to_scalar::<f64>()?)).unwrap();
        assert!(relative_error(&analytic, &numeric) < 1e-3);
    }
}
