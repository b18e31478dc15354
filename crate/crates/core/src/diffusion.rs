//! Noise schedule, forward noising, the clean-motion training objective and
//! the deterministic DDIM sampler.
//!
//! The network predicts the clean motion `x̂₀`; the sampler derives the
//! implied noise `ε̂ = (xₙ − √ᾱₙ·x̂₀)/√(1−ᾱₙ)` at every step, so training in
//! clean-motion space and stepping with a noise estimate do not mix
//! weightings.

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Conditioning, Denoiser};
use crate::motion::{FeatureStats, MotionSequence, FEATURE_DIM};
use crate::nn::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        }
    }
}

/// Cumulative signal coefficients `ᾱₙ` for `n ∈ 0..N`, with `ᾱ₀ = 1` and a
/// nonincreasing sequence after it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub const COSINE_OFFSET: f64 = 0.008;
    pub const LINEAR_BETA: (f64, f64) = (1e-4, 0.02);

    pub fn new(kind: ScheduleKind, num_steps: usize) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let n = num_steps as f64;
        let alpha_bar = match kind {
            ScheduleKind::Cosine => {
                let s = Self::COSINE_OFFSET;
                let f = |i: f64| (((i / n) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                let f0 = f(0.0);
                (0..num_steps).map(|i| (f(i as f64) / f0).min(1.0)).collect()
            }
            ScheduleKind::Linear => {
                let (lo, hi) = Self::LINEAR_BETA;
                let beta = |i: usize| {
                    if num_steps == 1 {
                        lo
                    } else {
                        lo + (hi - lo) * i as f64 / (num_steps - 1) as f64
                    }
                };
                let mut acc = 1.0;
                (0..num_steps)
                    .map(|i| {
                        let current = acc;
                        acc *= 1.0 - beta(i);
                        current
                    })
                    .collect()
            }
        };
        Self::from_alpha_bar(alpha_bar)
    }

    /// Custom schedule; values must lie in `[0, 1]` and be nonincreasing.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::Config("empty schedule".into()));
        }
        if let Some(bad) = alpha_bar.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Config(format!("schedule value {bad} outside [0, 1]")));
        }
        if let Some(i) = alpha_bar.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::Config(format!("schedule increases at step {}", i + 1)));
        }
        Ok(Self { alpha_bar })
    }

    pub fn num_steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, n: usize) -> Result<f64> {
        self.alpha_bar.get(n).copied().ok_or_else(|| {
            Error::InvalidArgument(format!("diffusion step {n} out of range 0..{}", self.num_steps()))
        })
    }

    /// `K` evenly spaced steps in descending order, ending at the smallest.
    /// `K = 1` is the single step `N − 1`; `K = N` visits every step.
    pub fn sampling_steps(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.num_steps();
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("sampling steps {k} outside 1..={n}")));
        }
        let mut steps: Vec<usize> = (0..k)
            .map(|i| ((((i + 1) * n) as f64 / k as f64).round() as usize).saturating_sub(1))
            .collect();
        steps.dedup();
        steps.reverse();
        Ok(steps)
    }
}

/// `√ᾱₙ·m0 + √(1−ᾱₙ)·ε` on a single sequence.
pub fn q_sample(m0: &MotionSequence, n: usize, eps: &MotionSequence, sched: &NoiseSchedule) -> Result<MotionSequence> {
    if (m0.frames(), m0.width()) != (eps.frames(), eps.width()) {
        return Err(Error::shape(format!(
            "noise is {}x{}, motion is {}x{}",
            eps.frames(),
            eps.width(),
            m0.frames(),
            m0.width()
        )));
    }
    let a = sched.alpha_bar(n)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let data = m0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| (sa * x as f64 + sn * e as f64) as f32)
        .collect();
    MotionSequence::from_vec(m0.frames(), m0.width(), data)
}

/// Batched forward noising of a `(B, F, W)` tensor, one step per row.
pub fn q_sample_tensor(x0: &Tensor, steps: &[usize], eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    let b = x0.dims()[0];
    if steps.len() != b || eps.dims() != x0.dims() {
        return Err(Error::shape("q_sample batch misaligned"));
    }
    let mut sa = Vec::with_capacity(b);
    let mut sn = Vec::with_capacity(b);
    for &n in steps {
        let a = sched.alpha_bar(n)?;
        sa.push(a.sqrt());
        sn.push((1.0 - a).sqrt());
    }
    let col = |v: Vec<f64>| -> Result<Tensor> {
        Ok(Tensor::from_vec(v, (b, 1, 1), x0.device())?.to_dtype(x0.dtype())?)
    };
    Ok((x0.broadcast_mul(&col(sa)?)? + eps.broadcast_mul(&col(sn)?)?)?)
}

/// Standard-normal values from `rng`.
pub fn standard_normal(n: usize, rng: &mut impl Rng) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Mean squared error between the network's clean-motion estimate from
/// `q_sample(x0, n, ε)` and `x0`, with `n` uniform and `ε` standard normal.
pub fn training_loss(
    model: &dyn Denoiser,
    x0: &Tensor,
    cond: &Conditioning,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
    mode: Mode,
) -> Result<Tensor> {
    let (b, _, _) = x0.dims3()?;
    if b == 0 {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let steps: Vec<usize> = (0..b).map(|_| rng.random_range(0..sched.num_steps())).collect();
    let eps = Tensor::from_vec(standard_normal(x0.elem_count(), rng), x0.shape(), x0.device())?
        .to_dtype(x0.dtype())?;
    let x_t = q_sample_tensor(x0, &steps, &eps, sched)?;
    let pred = model.predict_x0(&x_t, &steps, cond, mode)?;
    Ok((pred - x0)?.sqr()?.mean_all()?)
}

/// Classifier-free guidance settings. Guidance is not part of the method;
/// enabling it is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub enabled: bool,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub caption: String,
    pub frames: usize,
    /// DDIM steps `K ≤ N`.
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub guidance: GuidanceConfig,
}

impl SampleRequest {
    pub fn new(caption: impl Into<String>, frames: usize, steps: usize, seed: u64) -> Self {
        Self {
            caption: caption.into(),
            frames,
            steps,
            seed,
            guidance: GuidanceConfig::default(),
        }
    }

    pub fn check(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidArgument("frames must be at least 1".into()));
        }
        if self.guidance.enabled {
            return Err(Error::Unsupported("classifier-free guidance".into()));
        }
        sched.sampling_steps(self.steps).map(|_| ())
    }
}

/// Deterministic (η = 0) DDIM sampling. Every batch row of `cond` produces
/// one sequence; row `i` starts from noise seeded by `seeds[i]`. Outputs are
/// denormalised with `stats`.
pub fn ddim_sample_batch(
    model: &dyn Denoiser,
    sched: &NoiseSchedule,
    cond: &Conditioning,
    frames: usize,
    steps: usize,
    seeds: &[u64],
    stats: Option<&FeatureStats>,
) -> Result<Vec<MotionSequence>> {
    let stats = stats.ok_or_else(|| Error::InvalidArgument("sampling requires feature stats".into()))?;
    if stats.width() != FEATURE_DIM {
        return Err(Error::shape(format!("feature stats have width {}", stats.width())));
    }
    let b = cond.batch();
    if seeds.len() != b {
        return Err(Error::shape(format!("{} seeds for batch of {b}", seeds.len())));
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("frames must be at least 1".into()));
    }
    let schedule = sched.sampling_steps(steps)?;
    let dtype = cond.full.dtype();
    let device = cond.full.device().clone();
    let mut noise = Vec::with_capacity(b * frames * FEATURE_DIM);
    for &seed in seeds {
        noise.extend(standard_normal(frames * FEATURE_DIM, &mut ChaCha8Rng::seed_from_u64(seed)));
    }
    let mut x = Tensor::from_vec(noise, (b, frames, FEATURE_DIM), &device)?.to_dtype(dtype)?;
    for (i, &n) in schedule.iter().enumerate() {
        // Detached so the graph of one step does not keep every earlier
        // step alive.
        let x0 = model.predict_x0(&x, &vec![n; b], cond, Mode::Eval)?.detach();
        let Some(&next) = schedule.get(i + 1) else {
            x = x0;
            break;
        };
        x = ddim_step(&x, &x0, sched.alpha_bar(n)?, sched.alpha_bar(next)?)?.detach();
    }
    to_sequences(&x, stats)
}

/// One η = 0 update from step `n` (coefficient `a`) to `n'` (`a_next`).
pub fn ddim_step(x: &Tensor, x0: &Tensor, a: f64, a_next: f64) -> Result<Tensor> {
    let noise_scale = (1.0 - a).sqrt();
    let eps = if noise_scale > 1e-12 {
        ((x - (x0 * a.sqrt())?)? / noise_scale)?
    } else {
        x.zeros_like()?
    };
    Ok(((x0 * a_next.sqrt())? + (eps * (1.0 - a_next).sqrt())?)?)
}

/// Single-request sampling; `cond` must have batch size 1.
pub fn ddim_sample(
    model: &dyn Denoiser,
    sched: &NoiseSchedule,
    cond: &Conditioning,
    req: &SampleRequest,
    stats: Option<&FeatureStats>,
) -> Result<MotionSequence> {
    req.check(sched)?;
    if cond.batch() != 1 {
        return Err(Error::shape("single-request sampling needs batch-1 conditioning"));
    }
    let mut out = ddim_sample_batch(model, sched, cond, req.frames, req.steps, &[req.seed], stats)?;
    Ok(out.remove(0))
}

fn to_sequences(x: &Tensor, stats: &FeatureStats) -> Result<Vec<MotionSequence>> {
    let (b, f, w) = x.dims3()?;
    let flat: Vec<f32> = x.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    flat.chunks(f * w)
        .take(b)
        .map(|chunk| stats.denormalize(&MotionSequence::from_vec(f, w, chunk.to_vec())?))
        .collect()
}

/// Test oracle: ignores its input and always predicts the same clean
/// motion.
#[derive(Debug, Clone)]
pub struct FixedTarget {
    target: Tensor,
}

impl FixedTarget {
    /// `target` is in normalised feature space.
    pub fn new(target: &MotionSequence) -> Result<Self> {
        Ok(Self {
            target: Tensor::from_slice(target.data(), (1, target.frames(), target.width()), &Device::Cpu)?,
        })
    }
}

impl Denoiser for FixedTarget {
    fn predict_x0(&self, x_t: &Tensor, _steps: &[usize], _cond: &Conditioning, _mode: Mode) -> Result<Tensor> {
        let want = self.target.to_dtype(x_t.dtype())?;
        if want.dims()[1..] != x_t.dims()[1..] {
            return Err(Error::shape("oracle target shape differs from the request"));
        }
        Ok(want.broadcast_as(x_t.shape())?.contiguous()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: usize, seed: u64) -> MotionSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MotionSequence::from_vec(frames, FEATURE_DIM, standard_normal(frames * FEATURE_DIM, &mut rng)).unwrap()
    }

    fn empty_cond(b: usize) -> Conditioning {
        let t = Tensor::zeros((b, 4), DType::F32, &Device::Cpu).unwrap();
        Conditioning {
            parts: std::array::from_fn(|_| t.clone()),
            full: t,
        }
    }

    #[test]
    fn schedules_are_monotone_with_unit_start() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = NoiseSchedule::new(kind, 1000).unwrap();
            assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
            assert!(s.alpha_bars().windows(2).all(|w| w[1] <= w[0]));
            assert!(s.alpha_bar(999).unwrap() < 1e-3);
            assert!(s.alpha_bar(1000).is_err());
        }
        assert!(NoiseSchedule::from_alpha_bar(vec![0.5, 0.6]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.2]).is_err());
    }

    #[test]
    fn sampling_steps_cover_the_range() {
        let s = NoiseSchedule::new(ScheduleKind::Cosine, 1000).unwrap();
        assert_eq!(s.sampling_steps(1).unwrap(), vec![999]);
        let k50 = s.sampling_steps(50).unwrap();
        assert_eq!(k50.len(), 50);
        assert_eq!((k50[0], k50[49]), (999, 19));
        let all = s.sampling_steps(1000).unwrap();
        assert_eq!(all, (0..1000).rev().collect::<Vec<_>>());
        assert!(s.sampling_steps(0).is_err());
        assert!(s.sampling_steps(1001).is_err());
    }

    #[test]
    fn q_sample_limits_and_scalar_oracle() {
        let sched = NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.0]).unwrap();
        let m0 = seq(3, 1);
        let eps = seq(3, 2);
        assert_eq!(q_sample(&m0, 0, &eps, &sched).unwrap(), m0);
        assert_eq!(q_sample(&m0, 2, &eps, &sched).unwrap(), eps);
        let mid = q_sample(&m0, 1, &eps, &sched).unwrap();
        for i in 0..mid.data().len() {
            let expect = (0.5f64.sqrt() * m0.data()[i] as f64 + 0.5f64.sqrt() * eps.data()[i] as f64) as f32;
            assert_eq!(mid.data()[i], expect);
        }
        assert!(q_sample(&m0, 1, &seq(2, 0), &sched).is_err());
    }

    #[test]
    fn tensor_q_sample_agrees_with_sequence_form() {
        let sched = NoiseSchedule::new(ScheduleKind::Linear, 100).unwrap();
        let m0 = seq(4, 3);
        let eps = seq(4, 4);
        let t = |m: &MotionSequence| Tensor::from_slice(m.data(), (1, 4, FEATURE_DIM), &Device::Cpu).unwrap();
        let out: Vec<f32> = q_sample_tensor(&t(&m0), &[37], &t(&eps), &sched)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let expect = q_sample(&m0, 37, &eps, &sched).unwrap();
        for (a, b) in out.iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn oracle_denoiser_is_a_fixed_point() {
        let sched = NoiseSchedule::new(ScheduleKind::Cosine, 100).unwrap();
        let target = seq(6, 9);
        let oracle = FixedTarget::new(&target).unwrap();
        let stats = FeatureStats::identity(FEATURE_DIM);
        for k in [1, 7, 100] {
            let req = SampleRequest::new("x", 6, k, 3);
            let out = ddim_sample(&oracle, &sched, &empty_cond(1), &req, Some(&stats)).unwrap();
            for (a, b) in out.data().iter().zip(target.data()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn request_validation() {
        let sched = NoiseSchedule::new(ScheduleKind::Cosine, 10).unwrap();
        let oracle = FixedTarget::new(&seq(2, 0)).unwrap();
        let stats = FeatureStats::identity(FEATURE_DIM);
        let cond = empty_cond(1);
        let mut req = SampleRequest::new("x", 2, 11, 0);
        assert!(ddim_sample(&oracle, &sched, &cond, &req, Some(&stats)).is_err());
        req.steps = 2;
        assert!(ddim_sample(&oracle, &sched, &cond, &req, None).is_err());
        req.guidance.enabled = true;
        assert!(matches!(
            ddim_sample(&oracle, &sched, &cond, &req, Some(&stats)),
            Err(Error::Unsupported(_))
        ));
    }

    struct Zeros;

    impl Denoiser for Zeros {
        fn predict_x0(&self, x_t: &Tensor, _: &[usize], _: &Conditioning, _: Mode) -> Result<Tensor> {
            Ok(x_t.zeros_like()?)
        }
    }

    #[test]
    fn zero_model_loss_is_data_variance() {
        let sched = NoiseSchedule::new(ScheduleKind::Cosine, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = Tensor::from_vec(standard_normal(40 * FEATURE_DIM, &mut rng), (1, 40, FEATURE_DIM), &Device::Cpu).unwrap();
        let loss = training_loss(&Zeros, &x0, &empty_cond(1), &sched, &mut rng, Mode::Eval)
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!((loss - 1.0).abs() < 0.1);
        let oracle = FixedTarget::new(&MotionSequence::from_vec(40, FEATURE_DIM, x0.flatten_all().unwrap().to_vec1().unwrap()).unwrap()).unwrap();
        let loss = training_loss(&oracle, &x0, &empty_cond(1), &sched, &mut rng, Mode::Eval)
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert_eq!(loss, 0.0);
    }
}
