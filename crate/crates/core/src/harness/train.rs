//! Diffusion training loop with warm-cosine learning rate, JSONL loss log
//! and periodic checkpoints.

use std::cell::RefCell;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::training_loss;
use crate::error::{Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::harness::{CaptionedClip, DatasetIndex, Generator, Split, TextConditioner, TextEncoderKind, TrainConfig};
use crate::metrics::{train_eval_encoders, EvalEncoders, EvalPair};
use crate::motion::{FeatureStats, MotionSequence, FEATURE_DIM};
use crate::nn::Mode;
use crate::text::PartTexts;

pub const LOSS_LOG: &str = "loss.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const DIAGNOSTIC_CHECKPOINT: &str = "diagnostic.ckpt";

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub generator: Generator,
    pub losses: Vec<LossRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// A training example: normalised motion with its texts.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub motion: MotionSequence,
    pub caption: String,
    pub parts: PartTexts,
}

pub fn checkpoint_name(step: usize) -> String {
    format!("ckpt-{step:06}.ckpt")
}

/// Builds the conditioner the config asks for. `toy_contrastive` without a
/// checkpoint trains evaluation encoders on `clips` first.
pub fn build_conditioner(config: &TrainConfig, clips: &[CaptionedClip], stats: &FeatureStats) -> Result<TextConditioner> {
    match config.text_encoder {
        TextEncoderKind::Stub => Ok(TextConditioner::stub(config.model.text_dim)),
        TextEncoderKind::External => {
            let path = config
                .text_table
                .as_ref()
                .ok_or_else(|| Error::Config("external text encoder needs text_table".into()))?;
            TextConditioner::from_table(path)
        }
        TextEncoderKind::ToyContrastive => {
            if let Some(path) = &config.text_encoder_checkpoint {
                return Ok(TextConditioner::from_towers(EvalEncoders::load(path)?));
            }
            let pairs: Vec<EvalPair> = clips
                .iter()
                .map(|c| EvalPair {
                    motion: c.motion.clone(),
                    caption: c.caption.clone(),
                    parts: c.parts.clone(),
                })
                .collect();
            let (enc, report) = train_eval_encoders(&pairs, &config.contrastive, stats.clone())?;
            log::info!(
                "trained text towers: loss {:.4} -> {:.4}",
                report.losses.first().copied().unwrap_or(f64::NAN),
                report.losses.last().copied().unwrap_or(f64::NAN)
            );
            Ok(TextConditioner::from_towers(enc))
        }
    }
}

/// Trains on the train split of `index`. With `out_dir`, the loss log and
/// checkpoints are written there.
pub fn train(config: &TrainConfig, index: &DatasetIndex, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.check()?;
    index.check_decomposed()?;
    let mut records: Vec<_> = index.clips_in(Split::Train).collect();
    if let Some(n) = config.max_clips {
        records.truncate(n);
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument("no training clips".into()));
    }
    let clips = index.captioned(records)?;
    let text = build_conditioner(config, &clips, &index.stats)?;
    let generator = Generator::new(config, index.stats.clone(), text, index.prompt_version.clone())?;
    let items = clips
        .iter()
        .map(|c| {
            Ok(TrainItem {
                motion: index.stats.normalize(&c.motion)?,
                caption: c.caption.clone(),
                parts: c.parts.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    train_items(config, generator, &items, out_dir)
}

/// Crops `items[idx]` to a common length with per-row starts derived from
/// `seed`, as one `(B, L, 263)` tensor.
fn assemble(items: &[TrainItem], idx: &[usize], crop: usize, seed: u64, exec: Execution) -> Result<Tensor> {
    let len = idx.iter().map(|&i| items[i].motion.frames()).min().unwrap_or(1).min(crop);
    let rows = exec.map(idx.len(), |k| {
        let m = &items[idx[k]].motion;
        let start = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64)).random_range(0..=m.frames() - len);
        m.data()[start * FEATURE_DIM..(start + len) * FEATURE_DIM].to_vec()
    });
    Ok(Tensor::from_vec(rows.concat(), (idx.len(), len, FEATURE_DIM), &Device::Cpu)?)
}

/// The loop proper, on prepared (normalised) items.
pub fn train_items(
    config: &TrainConfig,
    mut generator: Generator,
    items: &[TrainItem],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no training items".into()));
    }
    let exec = if config.parallel_data {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOSS_LOG);
            Some((fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let mut opt = AdamW::new(
        generator.trainable(),
        ParamsAdamW {
            lr: config.learning_rate_at(0),
            weight_decay: config.weight_decay,
            ..Default::default()
        },
    )?;
    let dropout_rng = RefCell::new(ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX)));
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX - 1));
    let batch = config.batch_size.min(items.len());
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut cursor = items.len();
    let started = Instant::now();
    let mut losses = Vec::with_capacity(config.max_steps);
    let mut checkpoints = Vec::new();
    let start_step = generator.step;
    for step in start_step..start_step + config.max_steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let step_seed = derive_seed(config.seed, step as u64);
        let x0 = assemble(items, &idx, config.crop_frames, step_seed, exec)?;
        let texts: Vec<(&str, &PartTexts)> = idx.iter().map(|&i| (items[i].caption.as_str(), &items[i].parts)).collect();
        let cond = generator.text().condition(&texts)?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, u64::MAX));
        let loss = training_loss(
            generator.net(),
            &x0,
            &cond,
            generator.schedule(),
            &mut noise_rng,
            Mode::Train(&dropout_rng),
        )?;
        let value = loss.to_scalar::<f32>()? as f64;
        let lr = config.learning_rate_at(step - start_step);
        if !value.is_finite() {
            if let Some(dir) = out_dir {
                generator.save(&dir.join(DIAGNOSTIC_CHECKPOINT))?;
            }
            return Err(Error::NonFiniteLoss { step, loss: value });
        }
        opt.set_learning_rate(lr);
        opt.backward_step(&loss)?;
        generator.step = step + 1;
        let record = LossRecord {
            step,
            loss: value,
            lr,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if let Some((file, path)) = log.as_mut() {
            writeln!(file, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(&*path, e))?;
        }
        log::debug!("step {step} loss {value:.5} lr {lr:.2e}");
        losses.push(record);
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && generator.step.is_multiple_of(config.checkpoint_every) {
                let path = dir.join(checkpoint_name(generator.step));
                generator.save(&path)?;
                checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        let path = dir.join(FINAL_CHECKPOINT);
        generator.save(&path)?;
        checkpoints.push(path);
    }
    Ok(TrainOutcome {
        generator,
        losses,
        checkpoints,
    })
}

/// Centred moving average of the loss curve over `window` steps.
pub fn smoothed(losses: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..losses.len())
        .map(|i| {
            let lo = i.saturating_sub(w / 2);
            let hi = (i + w - w / 2).min(losses.len());
            losses[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}
