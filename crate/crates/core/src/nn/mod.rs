//! Small neural-network toolkit on top of `candle-core` tensors.
//!
//! Parameters live in a [`ParamStore`] as named [`Var`]s initialised from a
//! seeded ChaCha stream, so model construction is reproducible bit for bit.
//! Layers hold clones of the variable tensors; optimizer updates through the
//! `Var` are visible to them.

pub mod archive;

use std::cell::RefCell;
use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Forward-pass mode. Training mode enables dropout, drawing masks from the
/// given RNG.
#[derive(Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a RefCell<ChaCha8Rng>),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(-b, b)` with `b = 1/sqrt(fan_in)`.
    FanIn(usize),
    Normal(f64),
}

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Variables whose name starts with `prefix`.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Overwrites a variable in place (shape must match).
    pub fn assign(&self, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if var.dims() != shape {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: stored shape {shape:?}, model shape {:?}",
                var.dims()
            )));
        }
        let t = Tensor::from_slice(values, shape, &self.device)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }

    /// Assigns every parameter from `tensors[prefix + name]`. Missing
    /// entries, extra entries under `prefix`, and shape mismatches are
    /// errors.
    pub fn restore(&self, tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>, prefix: &str) -> Result<()> {
        for name in self.vars.keys() {
            let key = format!("{prefix}{name}");
            let (shape, values) = tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            self.assign(name, shape, values)?;
        }
        if let Some(extra) = tensors
            .keys()
            .filter_map(|k| k.strip_prefix(prefix))
            .find(|k| !self.vars.contains_key(*k))
        {
            return Err(Error::Checkpoint(format!("unexpected tensor {prefix}{extra}")));
        }
        Ok(())
    }

    /// Parameters keyed as `prefix + name`, for writing several stores into
    /// one archive.
    pub fn prefixed(&self, prefix: &str) -> Vec<(String, Var)> {
        self.vars.iter().map(|(k, v)| (format!("{prefix}{k}"), v.clone())).collect()
    }

    fn create(&mut self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn(fan_in) => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-b..b)).collect()
            }
            Init::Normal(std) => (0..n)
                .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
                .collect(),
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }
}

/// Name-prefixing view of a [`ParamStore`].
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl Scope<'_> {
    pub fn pp(&mut self, name: impl AsRef<str>) -> Scope<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.create(full, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(s: &mut Scope, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_init(s, in_dim, out_dim, Init::FanIn(in_dim))
    }

    /// Weights from `init`, bias zero (or fan-in uniform for [`Init::FanIn`]).
    pub fn with_init(s: &mut Scope, in_dim: usize, out_dim: usize, init: Init) -> Result<Self> {
        let weight = s.param("weight", &[out_dim, in_dim], init)?;
        let bias_init = match init {
            Init::FanIn(_) => init,
            _ => Init::Zeros,
        };
        let bias = Some(s.param("bias", &[out_dim], bias_init)?);
        Ok(Self { weight, bias })
    }

    pub fn zeros(s: &mut Scope, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_init(s, in_dim, out_dim, Init::Zeros)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    /// Applies the layer to the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().ok_or_else(|| Error::shape("linear on a scalar"))?;
        if in_dim != self.in_dim() {
            return Err(Error::shape(format!(
                "linear expects {} inputs, got {in_dim}",
                self.in_dim()
            )));
        }
        let rows = x.elem_count() / in_dim;
        let flat = x.reshape((rows, in_dim))?;
        let mut y = flat.matmul(&self.weight.t()?)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(s: &mut Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: s.param("gamma", &[dim], Init::Ones)?,
            beta: s.param("beta", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Multi-head self-attention over dimension 1 of a `(B, T, d)` tensor.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl SelfAttention {
    pub fn new(s: &mut Scope, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(&mut s.pp("q"), dim, dim)?,
            k: Linear::new(&mut s.pp("k"), dim, dim)?,
            v: Linear::new(&mut s.pp("v"), dim, dim)?,
            o: Linear::new(&mut s.pp("o"), dim, dim)?,
            heads,
        })
    }

    /// Attention probabilities, `(B, heads, T, T)`.
    pub fn weights(&self, x: &Tensor) -> Result<Tensor> {
        let (q, k, _) = self.qkv(x)?;
        self.probs(&q, &k)
    }

    fn qkv(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let (b, t, d) = x.dims3()?;
        let dh = d / self.heads;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, self.heads, dh))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        Ok((
            split(self.q.forward(x)?)?,
            split(self.k.forward(x)?)?,
            split(self.v.forward(x)?)?,
        ))
    }

    fn probs(&self, q: &Tensor, k: &Tensor) -> Result<Tensor> {
        let dh = q.dim(D::Minus1)?;
        let scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        Ok(candle_nn::ops::softmax(&scores, D::Minus1)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let (q, k, v) = self.qkv(x)?;
        let attn = self.probs(&q, &k)?;
        let ctx = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, t, d))?;
        self.o.forward(&ctx)
    }

    /// The value-then-output projection alone: what attention reduces to
    /// when every query attends to a single key.
    pub fn value_path(&self, x: &Tensor) -> Result<Tensor> {
        self.o.forward(&self.v.forward(x)?)
    }
}

/// Two-layer SiLU feed-forward network.
#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(s: &mut Scope, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(&mut s.pp("up"), dim, hidden)?,
            down: Linear::new(&mut s.pp("down"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.silu()?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Inverted dropout; identity in eval mode or when `p == 0`.
pub fn dropout(x: &Tensor, p: f64, mode: Mode) -> Result<Tensor> {
    let Mode::Train(rng) = mode else {
        return Ok(x.clone());
    };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f32> = {
        let mut rng = rng.borrow_mut();
        (0..x.elem_count())
            .map(|_| if rng.random::<f64>() < keep { 1.0 } else { 0.0 })
            .collect()
    };
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x.mul(&mask)? / keep)?)
}

/// `[cos(pos * w_0..w_{h-1}), sin(pos * w_0..w_{h-1})]` with
/// `w_i = 10000^(-i/h)` and `h = dim / 2`.
pub fn sinusoid(position: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (position * freq).sin_cos();
        out[i] = c;
        out[half + i] = s;
    }
    out
}

/// `(T, dim)` absolute positional encodings.
pub fn positional_encoding(frames: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let data: Vec<f64> = (0..frames).flat_map(|t| sinusoid(t as f64, dim)).collect();
    Ok(Tensor::from_vec(data, (frames, dim), device)?.to_dtype(dtype)?)
}

/// Central-difference gradient checking.
pub mod gradcheck {
    use super::*;

    /// Overwrites every parameter with `N(0, std²)` draws, e.g. to move
    /// zero-initialised layers away from a degenerate point before a check.
    pub fn randomize(store: &ParamStore, std: f64, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for var in store.vars.values() {
            let n = var.elem_count();
            let values: Vec<f64> = (0..n)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let t = Tensor::from_vec(values, var.shape(), var.device())?.to_dtype(var.dtype())?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// Analytic gradient of `loss` at `x` by backpropagation.
    pub fn analytic_grad(x: &Tensor, loss: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Vec<f64>> {
        let var = Var::from_tensor(x)?;
        let grads = loss(var.as_tensor())?.backward()?;
        let g = grads
            .get(&var)
            .ok_or_else(|| Error::shape("loss does not depend on the input"))?;
        Ok(g.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)
    }

    /// Relative error of backprop against central differences for the
    /// scalar `loss` at `x` (an f64 tensor).
    pub fn check(x: &Tensor, h: f64, loss: impl Fn(&Tensor) -> Result<Tensor>) -> Result<f64> {
        let analytic = analytic_grad(x, &loss)?;
        let numeric = numeric_grad(x, h, |t| Ok(loss(t)?.to_dtype(DType::F64)?.to_scalar::<f64>()?))?;
        Ok(relative_error(&analytic, &numeric))
    }

    /// Relative error between two gradient vectors, `|a - n| / max(|n|, tiny)`
    /// in the Euclidean norm.
    pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        let diff: f64 = analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        diff / norm.max(1e-12)
    }

    /// Numeric gradient of `f` at `x` (f64 tensors) by central differences.
    pub fn numeric_grad(
        x: &Tensor,
        h: f64,
        f: impl Fn(&Tensor) -> Result<f64>,
    ) -> Result<Vec<f64>> {
        let base: Vec<f64> = x.flatten_all()?.to_vec1()?;
        let mut out = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let fp = f(&Tensor::from_vec(plus, x.shape(), x.device())?)?;
            let fm = f(&Tensor::from_vec(minus, x.shape(), x.device())?)?;
            out.push((fp - fm) / (2.0 * h));
        }
        Ok(out)
    }
}
