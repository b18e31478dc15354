//! Glue between datasets, generators and the metrics suite.

use std::fs;
use std::path::Path;

use crate::diffusion::SampleRequest;
use crate::error::{Error, Result};
use crate::exec::derive_seed;
use crate::harness::{DatasetIndex, Generator, Split};
use crate::metrics::{train_eval_encoders, EvalEncoders, EvalPair, EvalTrainReport};
use crate::model::ContrastiveConfig;
use crate::motion::{read_motion_file, MotionSequence, MotionSidecar};

/// Every clip in `dir` (by `.json` sidecar), sorted by id.
pub fn read_motion_dir(dir: &Path) -> Result<Vec<(MotionSequence, MotionSidecar)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") && path.with_extension("bin").exists() {
            paths.push(path);
        }
    }
    paths.sort();
    let mut clips = paths.iter().map(|p| read_motion_file(p)).collect::<Result<Vec<_>>>()?;
    clips.sort_by(|a, b| a.1.id.cmp(&b.1.id));
    if clips.is_empty() {
        return Err(Error::Dataset {
            path: dir.to_path_buf(),
            msg: "no motion files".into(),
        });
    }
    Ok(clips)
}

/// Generated clips with the caption and part texts recorded in their
/// sidecars.
pub fn generated_pairs(dir: &Path) -> Result<Vec<EvalPair>> {
    read_motion_dir(dir)?
        .into_iter()
        .map(|(motion, side)| {
            let missing = |what: &str| Error::Dataset {
                path: dir.join(format!("{}.json", side.id)),
                msg: format!("sidecar has no {what}"),
            };
            Ok(EvalPair {
                caption: side.caption.clone().ok_or_else(|| missing("caption"))?,
                parts: side.part_texts.clone().ok_or_else(|| missing("part_texts"))?,
                motion,
            })
        })
        .collect()
}

/// Caption/motion pairs of one split.
pub fn eval_pairs(index: &DatasetIndex, split: Split) -> Result<Vec<EvalPair>> {
    Ok(index
        .captioned(index.clips_in(split))?
        .into_iter()
        .map(|c| EvalPair {
            motion: c.motion,
            caption: c.caption,
            parts: c.parts,
        })
        .collect())
}

/// Trains evaluation encoders on one split, normalising with the index
/// statistics.
pub fn train_evaluator(
    index: &DatasetIndex,
    split: Split,
    config: &ContrastiveConfig,
) -> Result<(EvalEncoders, EvalTrainReport)> {
    train_eval_encoders(&eval_pairs(index, split)?, config, index.stats.clone())
}

/// One sample per prompt, with the prompt's texts and frame count; row `i`
/// uses seed `derive_seed(seed, i)`.
pub fn sample_pairs(generator: &Generator, prompts: &[EvalPair], steps: usize, seed: u64) -> Result<Vec<EvalPair>> {
    let requests: Vec<SampleRequest> = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| SampleRequest::new(p.caption.clone(), p.motion.frames(), steps, derive_seed(seed, i as u64)))
        .collect();
    let batch: Vec<_> = requests.iter().zip(prompts).map(|(r, p)| (r, &p.parts)).collect();
    let motions = generator.sample(&batch)?;
    Ok(motions
        .into_iter()
        .zip(prompts)
        .map(|(motion, p)| EvalPair {
            motion,
            caption: p.caption.clone(),
            parts: p.parts.clone(),
        })
        .collect())
}
