//! Quantitative evaluation: distribution and retrieval metrics in the
//! evaluator's embedding space, part-level text/motion similarity, and
//! foot/ground artifact measures.
//!
//! Evaluators trained on the toy corpus make absolute values meaningful
//! only relative to each other (e.g. matched vs. shuffled captions).

pub mod artifacts;
pub mod distribution;
pub mod evaluator;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kinematics::{detect_foot_contacts, recover_global_positions, KinematicsConfig};
use crate::motion::{MotionSequence, PARTS};

pub use artifacts::{artifact_metrics, mean_artifacts, ArtifactMetrics};
pub use distribution::{
    default_diversity_pairs, diversity, diversity_pairs, fid, fit_gaussian, frechet_distance,
    mean_pair_distance, mean_pmm_sim, mm_dist, pmm_sim, r_precision, FeatureSet, Origin,
    DEFAULT_POOL_SIZE, FID_RIDGE,
};
pub use evaluator::{
    ambiguous_captions, train_eval_encoders, EvalEncoders, EvalPair, EvalTrainReport, Target,
    EVAL_HEADER,
};

pub const REPORT_SCHEMA_VERSION: &str = "lgtm-metrics-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// R-precision pool size; clamped to the number of generated clips.
    pub pool_size: usize,
    /// `None` uses `min(300, n/2)`.
    pub diversity_pairs: Option<usize>,
    pub seed: u64,
    pub kinematics: KinematicsConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pool_size: DEFAULT_POOL_SIZE,
            diversity_pairs: None,
            seed: 0,
            kinematics: KinematicsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: String,
    pub fid: f64,
    pub diversity: f64,
    /// Top-1, top-2, top-3.
    pub r_precision: [f64; 3],
    pub mm_dist: f64,
    pub pmm_sim: BTreeMap<String, f64>,
    /// cm/s.
    pub sliding: f64,
    /// cm.
    pub penetration: f64,
    /// cm.
    pub floating: f64,
    pub sliding_defined: bool,
    pub generated_count: usize,
    pub reference_count: usize,
    pub pool_size: usize,
    pub diversity_pairs: usize,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn check(&self) -> Result<()> {
        let scalars = [self.fid, self.diversity, self.mm_dist, self.sliding, self.penetration, self.floating];
        if scalars.iter().chain(&self.r_precision).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite metric".into()));
        }
        if self.pmm_sim.values().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("part similarity outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Artifact metrics of one raw-feature clip, with contacts re-detected
/// from the recovered positions.
pub fn clip_artifacts(m: &MotionSequence, cfg: &KinematicsConfig) -> Result<ArtifactMetrics> {
    let gp = recover_global_positions(m, cfg.fps)?;
    let contacts = detect_foot_contacts(&gp, cfg.contact_velocity, cfg.contact_height)?;
    artifact_metrics(&gp, &contacts, cfg)
}

/// Mean part-level similarity between each generated clip's part motion
/// and the part texts it is paired with.
pub fn part_similarity(enc: &EvalEncoders, generated: &[EvalPair], exec: Execution) -> Result<BTreeMap<String, f64>> {
    let motions: Vec<MotionSequence> = generated.iter().map(|g| g.motion.clone()).collect();
    let mut out = BTreeMap::new();
    for part in PARTS {
        let target = Target::Part(part);
        let m = enc.embed_motions(&motions, target, exec)?;
        let texts: Vec<&str> = generated.iter().map(|g| g.parts.get(part)).collect();
        let t = enc.embed_texts(&texts, target)?;
        out.insert(part.name().to_string(), mean_pmm_sim(&m, &t)?);
    }
    Ok(out)
}

/// Full metric suite for generated clips (with the captions and part texts
/// they were generated from) against reference clips.
pub fn evaluate(
    enc: &EvalEncoders,
    generated: &[EvalPair],
    reference: &[MotionSequence],
    cfg: &EvalConfig,
    exec: Execution,
) -> Result<MetricsReport> {
    if generated.len() < 2 || reference.len() < 2 {
        return Err(Error::InvalidArgument(
            "evaluation needs at least two generated and two reference clips".into(),
        ));
    }
    let motions: Vec<MotionSequence> = generated.iter().map(|g| g.motion.clone()).collect();
    let gen_m = enc.embed_motions(&motions, Target::FullBody, exec)?;
    let ref_m = enc.embed_motions(reference, Target::FullBody, exec)?;
    let captions: Vec<&str> = generated.iter().map(|g| g.caption.as_str()).collect();
    let gen_t = enc.embed_texts(&captions, Target::FullBody)?;
    let pool = cfg.pool_size.min(generated.len());
    let pairs = cfg
        .diversity_pairs
        .unwrap_or_else(|| default_diversity_pairs(generated.len()));
    let r = r_precision(&gen_m, &gen_t, pool, &[1, 2, 3], cfg.seed, exec)?;
    let artifacts = exec.try_map(motions.len(), |i| clip_artifacts(&motions[i], &cfg.kinematics))?;
    let art = mean_artifacts(&artifacts);
    let report = MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        fid: fid(&gen_m, &ref_m)?,
        diversity: diversity(&gen_m, pairs, cfg.seed)?,
        r_precision: [r[0], r[1], r[2]],
        mm_dist: mm_dist(&gen_m, &gen_t)?,
        pmm_sim: part_similarity(enc, generated, exec)?,
        sliding: art.sliding,
        penetration: art.penetration,
        floating: art.floating,
        sliding_defined: art.sliding_defined,
        generated_count: generated.len(),
        reference_count: reference.len(),
        pool_size: pool,
        diversity_pairs: pairs,
        config: serde_json::to_value(cfg)?,
    };
    report.check()?;
    Ok(report)
}
