//! Evaluation encoders: one full-body and six part-level motion/text tower
//! pairs trained contrastively on (motion, caption, part texts) triples.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{FeatureSet, Origin};
use crate::model::{contrastive_loss, ContrastiveConfig, TowerPair};
use crate::motion::{FeatureStats, MotionSequence, Part, SkeletonMap, FEATURE_DIM, PARTS};
use crate::nn::archive::{read_archive, write_archive};
use crate::nn::ParamStore;
use crate::text::PartTexts;

pub const EVAL_HEADER: &str = "lgtm-eval-v1";
pub const MIN_EVAL_PAIRS: usize = 8;

/// Which tower pair to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    FullBody,
    Part(Part),
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::FullBody => "full_body",
            Target::Part(p) => p.name(),
        }
    }
}

/// One training or evaluation triple. `motion` is in raw feature space.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub motion: MotionSequence,
    pub caption: String,
    pub parts: PartTexts,
}

#[derive(Debug, Clone, Default)]
pub struct EvalTrainReport {
    /// Total (full-body plus part) loss per step.
    pub losses: Vec<f64>,
    /// Captions shared by more than one distinct motion; retrieval for them
    /// is ambiguous by construction.
    pub ambiguous_captions: Vec<String>,
}

pub struct EvalEncoders {
    store: ParamStore,
    full: TowerPair,
    parts: Vec<TowerPair>,
    columns: Vec<Tensor>,
    stats: FeatureStats,
    config: ContrastiveConfig,
}

impl EvalEncoders {
    /// Freshly initialised towers.
    pub fn new(config: &ContrastiveConfig, stats: FeatureStats) -> Result<Self> {
        if stats.width() != FEATURE_DIM {
            return Err(Error::shape(format!("stats width {}", stats.width())));
        }
        let mut store = ParamStore::new(DType::F32, config.seed);
        let full = TowerPair::new(&mut store.root().pp("full_body"), "full_body", FEATURE_DIM, config)?;
        let parts = PARTS
            .iter()
            .map(|p| TowerPair::new(&mut store.root().pp(p.name()), p.name(), p.width(), config))
            .collect::<Result<Vec<_>>>()?;
        let skel = SkeletonMap::standard();
        let columns = PARTS
            .iter()
            .map(|&p| {
                let cols: Vec<u32> = skel.columns(p).iter().map(|&c| c as u32).collect();
                Ok(Tensor::new(cols.as_slice(), &Device::Cpu)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            store,
            full,
            parts,
            columns,
            stats,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &ContrastiveConfig {
        &self.config
    }

    pub fn stats(&self) -> &FeatureStats {
        &self.stats
    }

    pub fn tower(&self, target: Target) -> &TowerPair {
        match target {
            Target::FullBody => &self.full,
            Target::Part(p) => &self.parts[p.index()],
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn select(&self, x: &Tensor, target: Target) -> Result<Tensor> {
        Ok(match target {
            Target::FullBody => x.clone(),
            Target::Part(p) => x.index_select(&self.columns[p.index()], 2)?,
        })
    }

    /// Unit embedding of one raw-feature sequence.
    pub fn embed_motion(&self, m: &MotionSequence, target: Target) -> Result<Vec<f32>> {
        let normed = self.stats.normalize(m)?;
        let x = Tensor::from_slice(normed.data(), (1, m.frames(), m.width()), &Device::Cpu)?;
        Ok(self.tower(target).motion.forward(&self.select(&x, target)?)?.squeeze(0)?.to_vec1()?)
    }

    pub fn embed_motions(&self, ms: &[MotionSequence], target: Target, exec: Execution) -> Result<FeatureSet> {
        let rows = exec.try_map(ms.len(), |i| self.embed_motion(&ms[i], target))?;
        FeatureSet::from_f32(&rows, Origin::Motion, target.name())
    }

    pub fn embed_texts(&self, texts: &[&str], target: Target) -> Result<FeatureSet> {
        let e = self.tower(target).embed_texts(texts)?;
        let rows: Vec<Vec<f32>> = e.to_vec2()?;
        FeatureSet::from_f32(&rows, Origin::Text, target.name())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = json!({"config": self.config, "stats": self.stats});
        write_archive(path, EVAL_HEADER, meta, self.store.named())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = read_archive(path, EVAL_HEADER)?;
        let config: ContrastiveConfig = serde_json::from_value(archive.meta["config"].clone())?;
        let stats: FeatureStats = serde_json::from_value(archive.meta["stats"].clone())?;
        Self::restore(&config, stats, &archive.tensors, "")
    }

    /// Towers with parameters taken from `tensors[prefix + name]`, for
    /// archives that embed the encoders next to other weights.
    pub fn restore(
        config: &ContrastiveConfig,
        stats: FeatureStats,
        tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
        prefix: &str,
    ) -> Result<Self> {
        let enc = Self::new(config, stats)?;
        enc.store.restore(tensors, prefix)?;
        Ok(enc)
    }

    pub fn prefixed_parameters(&self, prefix: &str) -> Vec<(String, candle_core::Var)> {
        self.store.prefixed(prefix)
    }

    pub fn named_parameters(&self) -> &BTreeMap<String, candle_core::Var> {
        self.store.named()
    }
}

fn group_ids<'a>(texts: impl Iterator<Item = &'a str>) -> Vec<usize> {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    texts
        .map(|t| {
            let next = ids.len();
            *ids.entry(t).or_insert(next)
        })
        .collect()
}

/// Captions that label more than one distinct motion.
pub fn ambiguous_captions(pairs: &[EvalPair]) -> Vec<String> {
    let mut by_caption: BTreeMap<&str, Vec<&MotionSequence>> = BTreeMap::new();
    for p in pairs {
        by_caption.entry(p.caption.as_str()).or_default().push(&p.motion);
    }
    by_caption
        .into_iter()
        .filter(|(_, ms)| ms.iter().any(|m| *m != ms[0]))
        .map(|(c, _)| c.to_string())
        .collect()
}

/// Trains the seven tower pairs with the symmetric contrastive objective on
/// random crops. Deterministic given `config.seed`.
pub fn train_eval_encoders(
    pairs: &[EvalPair],
    config: &ContrastiveConfig,
    stats: FeatureStats,
) -> Result<(EvalEncoders, EvalTrainReport)> {
    let distinct = group_ids(pairs.iter().map(|p| p.caption.as_str()));
    let distinct = distinct.iter().max().map_or(0, |m| m + 1);
    if pairs.len() < MIN_EVAL_PAIRS || distinct < MIN_EVAL_PAIRS {
        return Err(Error::InvalidArgument(format!(
            "evaluator training needs at least {MIN_EVAL_PAIRS} distinct pairs, have {distinct}"
        )));
    }
    if config.batch_size < 2 || config.crop_frames == 0 {
        return Err(Error::Config("evaluator batch must be ≥ 2 and crop ≥ 1".into()));
    }
    let enc = EvalEncoders::new(config, stats)?;
    let normalized = pairs
        .iter()
        .map(|p| enc.stats.normalize(&p.motion))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = AdamW::new(
        enc.store.vars(),
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 1e-4,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = EvalTrainReport {
        ambiguous_captions: ambiguous_captions(pairs),
        ..Default::default()
    };
    let batch = config.batch_size.min(pairs.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..config.steps {
        order.shuffle(&mut rng);
        let idx = &order[..batch];
        let len = idx
            .iter()
            .map(|&i| normalized[i].frames())
            .min()
            .unwrap_or(1)
            .min(config.crop_frames);
        let mut data = Vec::with_capacity(batch * len * FEATURE_DIM);
        for &i in idx {
            let start = rng.random_range(0..=normalized[i].frames() - len);
            data.extend_from_slice(&normalized[i].data()[start * FEATURE_DIM..(start + len) * FEATURE_DIM]);
        }
        let x = Tensor::from_vec(data, (batch, len, FEATURE_DIM), &Device::Cpu)?;
        let mut total = {
            let captions: Vec<&str> = idx.iter().map(|&i| pairs[i].caption.as_str()).collect();
            step_loss(&enc, &x, &captions, Target::FullBody, config.temperature)?
        };
        for part in PARTS {
            let texts: Vec<&str> = idx.iter().map(|&i| pairs[i].parts.get(part)).collect();
            total = (total + step_loss(&enc, &x, &texts, Target::Part(part), config.temperature)?)?;
        }
        let value = total.to_scalar::<f32>()? as f64;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: report.losses.len(),
                loss: value,
            });
        }
        report.losses.push(value);
        opt.backward_step(&total)?;
    }
    Ok((enc, report))
}

fn step_loss(enc: &EvalEncoders, x: &Tensor, texts: &[&str], target: Target, temperature: f64) -> Result<Tensor> {
    let tower = enc.tower(target);
    let m = tower.motion.forward(&enc.select(x, target)?)?;
    let t = tower.embed_texts(texts)?;
    contrastive_loss(&m, &t, &group_ids(texts.iter().copied()), temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::TextSource;

    fn toy_pairs(n: usize) -> Vec<EvalPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..n)
            .map(|i| {
                let frames = 12;
                let mut m = MotionSequence::zeros(frames);
                for f in 0..frames {
                    for c in 0..FEATURE_DIM {
                        let phase = (c % 7) as f32 * 0.3 + i as f32;
                        m.set(f, c, (f as f32 * 0.2 * (1 + i) as f32 + phase).sin() + rng.random::<f32>() * 0.05);
                    }
                }
                EvalPair {
                    motion: m,
                    caption: format!("action number {i}"),
                    parts: PartTexts::from_fn(TextSource::Manual, |p| format!("{} move {}", p.name(), i % 3)),
                }
            })
            .collect()
    }

    fn small() -> ContrastiveConfig {
        ContrastiveConfig {
            embed_dim: 16,
            hidden: 32,
            buckets: 64,
            steps: 200,
            batch_size: 8,
            crop_frames: 12,
            ..Default::default()
        }
    }

    #[test]
    fn overfits_eight_pairs_to_perfect_retrieval() {
        let pairs = toy_pairs(8);
        let motions: Vec<MotionSequence> = pairs.iter().map(|p| p.motion.clone()).collect();
        let stats = crate::motion::compute_stats(&motions).unwrap();
        let (enc, report) = train_eval_encoders(&pairs, &small(), stats).unwrap();
        assert!(report.losses.last().unwrap() < &report.losses[0]);
        let m = enc.embed_motions(&motions, Target::FullBody, Execution::Sequential).unwrap();
        let captions: Vec<&str> = pairs.iter().map(|p| p.caption.as_str()).collect();
        let t = enc.embed_texts(&captions, Target::FullBody).unwrap();
        let r = crate::metrics::r_precision(&m, &t, 8, &[1], 0, Execution::Sequential).unwrap();
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn too_few_pairs_and_ambiguity() {
        let mut pairs = toy_pairs(9);
        let stats = FeatureStats::identity(FEATURE_DIM);
        assert!(train_eval_encoders(&pairs[..7], &small(), stats.clone()).is_err());
        pairs[8].caption = pairs[0].caption.clone();
        assert_eq!(ambiguous_captions(&pairs), vec![pairs[0].caption.clone()]);
    }

    #[test]
    fn save_load_round_trip() {
        let stats = FeatureStats::identity(FEATURE_DIM);
        let enc = EvalEncoders::new(&small(), stats).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.ckpt");
        enc.save(&path).unwrap();
        let back = EvalEncoders::load(&path).unwrap();
        let m = MotionSequence::zeros(5);
        assert_eq!(
            enc.embed_motion(&m, Target::Part(Part::Head)).unwrap(),
            back.embed_motion(&m, Target::Part(Part::Head)).unwrap()
        );
    }
}
