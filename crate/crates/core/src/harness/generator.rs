//! The trained generator: network weights, text conditioning, schedule and
//! feature statistics, saved together as one checkpoint.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::diffusion::{ddim_sample_batch, NoiseSchedule, SampleRequest};
use crate::error::{Error, Result};
use crate::harness::{TextEncoderKind, TrainConfig};
use crate::metrics::{EvalEncoders, Target};
use crate::model::{
    Conditioning, ContrastiveConfig, EmbeddingTable, LgtmNet, StubTextEncoder, TableTextEncoder, TextEncoder,
};
use crate::motion::{FeatureStats, MotionSequence, Part, PARTS};
use crate::nn::archive::{read_archive, write_archive};
use crate::nn::ParamStore;
use crate::text::PartTexts;

pub const CHECKPOINT_HEADER: &str = "lgtm-ckpt-v1";
const MODEL_PREFIX: &str = "model.";
const TEXT_PREFIX: &str = "text.";

/// Conditioning slot: one per part, then the full-body caption.
const SLOTS: usize = 7;
const FULL_SLOT: usize = 6;

fn slot_identity(slot: usize) -> &'static str {
    if slot == FULL_SLOT {
        "full_body"
    } else {
        PARTS[slot].name()
    }
}

/// How the conditioner was built, recorded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionerSpec {
    Stub { dim: usize },
    ToyContrastive { config: ContrastiveConfig, stats: FeatureStats },
    External { table: PathBuf },
}

/// Embeddings already computed, by (slot, text).
type EmbeddingCache = HashMap<(usize, String), Arc<Vec<f32>>>;

/// Frozen text encoders for the six part slots and the full caption, with
/// an embedding cache (encoders are deterministic, so caching is exact).
pub struct TextConditioner {
    spec: ConditionerSpec,
    slots: Vec<Box<dyn TextEncoder>>,
    towers: Option<EvalEncoders>,
    cache: Mutex<EmbeddingCache>,
}

impl std::fmt::Debug for TextConditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextConditioner").field("spec", &self.spec).finish()
    }
}

impl TextConditioner {
    fn with_slots(spec: ConditionerSpec, slots: Vec<Box<dyn TextEncoder>>, towers: Option<EvalEncoders>) -> Self {
        Self {
            spec,
            slots,
            towers,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn stub(dim: usize) -> Self {
        let slots = (0..SLOTS)
            .map(|s| Box::new(StubTextEncoder::new(slot_identity(s), dim)) as Box<dyn TextEncoder>)
            .collect();
        Self::with_slots(ConditionerSpec::Stub { dim }, slots, None)
    }

    /// Text towers of evaluation encoders: part towers for part texts, the
    /// full-body tower for captions.
    pub fn from_towers(towers: EvalEncoders) -> Self {
        let slots = (0..SLOTS)
            .map(|s| {
                let target = if s == FULL_SLOT { Target::FullBody } else { Target::Part(PARTS[s]) };
                Box::new(towers.tower(target).clone()) as Box<dyn TextEncoder>
            })
            .collect();
        let spec = ConditionerSpec::ToyContrastive {
            config: towers.config().clone(),
            stats: towers.stats().clone(),
        };
        Self::with_slots(spec, slots, Some(towers))
    }

    pub fn from_table(path: &Path) -> Result<Self> {
        let table = Arc::new(EmbeddingTable::load(path)?);
        let slots = (0..SLOTS)
            .map(|s| Box::new(TableTextEncoder::new(slot_identity(s), table.clone())) as Box<dyn TextEncoder>)
            .collect();
        Ok(Self::with_slots(
            ConditionerSpec::External { table: path.to_path_buf() },
            slots,
            None,
        ))
    }

    pub fn spec(&self) -> &ConditionerSpec {
        &self.spec
    }

    pub fn kind(&self) -> TextEncoderKind {
        match self.spec {
            ConditionerSpec::Stub { .. } => TextEncoderKind::Stub,
            ConditionerSpec::ToyContrastive { .. } => TextEncoderKind::ToyContrastive,
            ConditionerSpec::External { .. } => TextEncoderKind::External,
        }
    }

    pub fn dim(&self) -> usize {
        self.slots[0].dim()
    }

    fn embed(&self, slot: usize, text: &str) -> Result<Arc<Vec<f32>>> {
        let key = (slot, text.to_string());
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let v = Arc::new(self.slots[slot].encode(text)?.vector);
        self.cache.lock().expect("cache lock").insert(key, v.clone());
        Ok(v)
    }

    /// Embeds a part text with that part's encoder.
    pub fn embed_part(&self, part: Part, text: &str) -> Result<Vec<f32>> {
        Ok(self.embed(part.index(), text)?.to_vec())
    }

    /// Batch conditioning, one row per `(caption, parts)` pair.
    pub fn condition(&self, items: &[(&str, &PartTexts)]) -> Result<Conditioning> {
        let d = self.dim();
        let b = items.len();
        let gather = |slot: usize| -> Result<Tensor> {
            let mut data = Vec::with_capacity(b * d);
            for (caption, parts) in items {
                let text = if slot == FULL_SLOT { caption } else { parts.get(PARTS[slot]) };
                data.extend_from_slice(&self.embed(slot, text)?);
            }
            Ok(Tensor::from_vec(data, (b, d), &Device::Cpu)?)
        };
        Ok(Conditioning {
            parts: [gather(0)?, gather(1)?, gather(2)?, gather(3)?, gather(4)?, gather(5)?],
            full: gather(FULL_SLOT)?,
        })
    }

    fn parameters(&self) -> Vec<(String, Var)> {
        self.towers
            .as_ref()
            .map(|t| t.prefixed_parameters(TEXT_PREFIX))
            .unwrap_or_default()
    }

    fn restore(spec: ConditionerSpec, tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<Self> {
        match spec {
            ConditionerSpec::Stub { dim } => Ok(Self::stub(dim)),
            ConditionerSpec::ToyContrastive { config, stats } => Ok(Self::from_towers(EvalEncoders::restore(
                &config,
                stats,
                tensors,
                TEXT_PREFIX,
            )?)),
            ConditionerSpec::External { table } => Self::from_table(&table),
        }
    }
}

/// Checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub stats: FeatureStats,
    pub text: ConditionerSpec,
    pub prompt_version: Option<String>,
    pub step: usize,
}

/// Network, conditioning and normalisation needed to sample.
pub struct Generator {
    store: ParamStore,
    net: LgtmNet,
    text: TextConditioner,
    schedule: NoiseSchedule,
    stats: FeatureStats,
    config: TrainConfig,
    prompt_version: Option<String>,
    /// Optimisation steps taken so far.
    pub step: usize,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("params", &self.store.num_params())
            .field("text", &self.text)
            .field("step", &self.step)
            .finish()
    }
}

impl Generator {
    /// Freshly initialised network (seeded by `config.seed`).
    pub fn new(
        config: &TrainConfig,
        stats: FeatureStats,
        text: TextConditioner,
        prompt_version: Option<String>,
    ) -> Result<Self> {
        config.check()?;
        if text.dim() != config.model.text_dim {
            return Err(Error::Config(format!(
                "text encoder produces {}-dim embeddings, model expects text_dim {}",
                text.dim(),
                config.model.text_dim
            )));
        }
        let mut store = ParamStore::new(DType::F32, config.seed);
        let net = LgtmNet::new(&mut store.root().pp("model"), &config.model)?;
        Ok(Self {
            store,
            net,
            text,
            schedule: NoiseSchedule::new(config.schedule, config.model.num_steps)?,
            stats,
            config: config.clone(),
            prompt_version,
            step: 0,
        })
    }

    pub fn net(&self) -> &LgtmNet {
        &self.net
    }

    pub fn text(&self) -> &TextConditioner {
        &self.text
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn stats(&self) -> &FeatureStats {
        &self.stats
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn prompt_version(&self) -> Option<&str> {
        self.prompt_version.as_deref()
    }

    /// Trainable network parameters (text encoders are frozen).
    pub fn trainable(&self) -> Vec<Var> {
        self.store.vars()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            config: self.config.clone(),
            stats: self.stats.clone(),
            text: self.text.spec().clone(),
            prompt_version: self.prompt_version.clone(),
            step: self.step,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, Var)> = self.store.named().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        tensors.extend(self.text.parameters());
        write_archive(
            path,
            CHECKPOINT_HEADER,
            json!(self.meta()),
            tensors.iter().map(|(k, v)| (k, v)),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let archive = read_archive(path, CHECKPOINT_HEADER)?;
        let meta: CheckpointMeta = serde_json::from_value(archive.meta)
            .map_err(|e| Error::Checkpoint(format!("{}: bad metadata: {e}", path.display())))?;
        let model_tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = archive
            .tensors
            .iter()
            .filter(|(k, _)| k.starts_with(MODEL_PREFIX))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let text = TextConditioner::restore(meta.text, &archive.tensors)?;
        let mut g = Self::new(&meta.config, meta.stats, text, meta.prompt_version)?;
        g.store.restore(&model_tensors, "")?;
        g.step = meta.step;
        Ok(g)
    }

    /// Samples one clip per request (decompositions supplied), denormalised,
    /// with contacts clamped to their valid range.
    pub fn sample(&self, requests: &[(&SampleRequest, &PartTexts)]) -> Result<Vec<MotionSequence>> {
        let mut out = Vec::with_capacity(requests.len());
        // Requests sharing frame count and step count run as one batch.
        let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, (req, _)) in requests.iter().enumerate() {
            req.check(&self.schedule)?;
            groups.entry((req.frames, req.steps)).or_default().push(i);
        }
        let mut results: Vec<Option<MotionSequence>> = vec![None; requests.len()];
        for ((frames, steps), idx) in groups {
            let items: Vec<(&str, &PartTexts)> =
                idx.iter().map(|&i| (requests[i].0.caption.as_str(), requests[i].1)).collect();
            let cond = self.text.condition(&items)?;
            let seeds: Vec<u64> = idx.iter().map(|&i| requests[i].0.seed).collect();
            let ms = ddim_sample_batch(&self.net, &self.schedule, &cond, frames, steps, &seeds, Some(&self.stats))?;
            for (i, mut m) in idx.into_iter().zip(ms) {
                m.clamp_contacts();
                results[i] = Some(m);
            }
        }
        for r in results {
            out.push(r.expect("every request sampled"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::motion::FEATURE_DIM;
    use crate::text::TextSource;

    pub(crate) fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig {
            text_encoder: TextEncoderKind::Stub,
            model: ModelConfig::default(),
            ..Default::default()
        };
        cfg.model.text_dim = 16;
        cfg.model.num_steps = 50;
        cfg.model.part.latent_dim = 16;
        cfg.model.part.layers = 1;
        cfg.model.part.heads = 2;
        cfg.model.part.ff_dim = 32;
        cfg.model.optimizer.blocks = 1;
        cfg.model.optimizer.heads = 2;
        cfg.model.optimizer.ff_dim = 64;
        cfg.model.optimizer.smooth_hidden = 8;
        cfg
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let cfg = tiny_config();
        let g = Generator::new(&cfg, FeatureStats::identity(FEATURE_DIM), TextConditioner::stub(16), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        g.save(&path).unwrap();
        let back = Generator::load(&path).unwrap();
        let req = SampleRequest::new("a person walks forward", 6, 3, 11);
        let parts = PartTexts::idle(TextSource::Manual);
        let a = g.sample(&[(&req, &parts)]).unwrap();
        let b = back.sample(&[(&req, &parts)]).unwrap();
        assert_eq!(a, b);
        assert_eq!(back.meta(), g.meta());
    }

    #[test]
    fn text_dim_mismatch_is_rejected() {
        let cfg = tiny_config();
        let err = Generator::new(&cfg, FeatureStats::identity(FEATURE_DIM), TextConditioner::stub(8), None).unwrap_err();
        assert!(err.to_string().contains("text_dim"), "{err}");
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"lgtm-ckpt-v0\n").unwrap();
        assert!(matches!(Generator::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn batched_sampling_matches_single() {
        let cfg = tiny_config();
        let g = Generator::new(&cfg, FeatureStats::identity(FEATURE_DIM), TextConditioner::stub(16), None).unwrap();
        let parts = PartTexts::idle(TextSource::Manual);
        let r1 = SampleRequest::new("walk", 5, 2, 1);
        let r2 = SampleRequest::new("jump", 5, 2, 2);
        let both = g.sample(&[(&r1, &parts), (&r2, &parts)]).unwrap();
        let one = g.sample(&[(&r2, &parts)]).unwrap();
        for (a, b) in both[1].data().iter().zip(one[0].data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
