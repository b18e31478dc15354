use serde::{Deserialize, Serialize};

use super::{MotionSequence, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const STD_FLOOR: f32 = 1e-6;

/// Per-column mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureStats {
    /// Mean zero, std one.
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Builds stats, flooring `std` at [`STD_FLOOR`].
    pub fn new(mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::shape("mean and std widths differ"));
        }
        let std = std.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, m: &MotionSequence) -> Result<()> {
        if self.width() != m.width() {
            return Err(Error::shape(format!(
                "stats width {} vs motion width {}",
                self.width(),
                m.width()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, m: &MotionSequence) -> Result<MotionSequence> {
        self.check(m)?;
        let mut out = m.clone();
        let w = self.width();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % w;
            *v = (*v - self.mean[c]) / self.std[c];
        }
        Ok(out)
    }

    pub fn denormalize(&self, m: &MotionSequence) -> Result<MotionSequence> {
        self.check(m)?;
        let mut out = m.clone();
        let w = self.width();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % w;
            *v = *v * self.std[c] + self.mean[c];
        }
        Ok(out)
    }
}

/// Running per-column moments (Welford), mergeable across sequences.
#[derive(Clone)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn of(m: &MotionSequence) -> Self {
        let w = m.width();
        let mut acc = Moments {
            count: 0.0,
            mean: vec![0.0; w],
            m2: vec![0.0; w],
        };
        for f in 0..m.frames() {
            acc.count += 1.0;
            for (c, &x) in m.row(f).iter().enumerate() {
                let x = f64::from(x);
                let delta = x - acc.mean[c];
                acc.mean[c] += delta / acc.count;
                acc.m2[c] += delta * (x - acc.mean[c]);
            }
        }
        acc
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        let total = self.count + other.count;
        for c in 0..self.mean.len() {
            let delta = other.mean[c] - self.mean[c];
            self.mean[c] += delta * other.count / total;
            self.m2[c] += other.m2[c] + delta * delta * self.count * other.count / total;
        }
        self.count = total;
    }
}

pub fn compute_stats(corpus: &[MotionSequence]) -> Result<FeatureStats> {
    compute_stats_with(corpus, Execution::default())
}

/// Per-column statistics over every frame of every sequence. Partial
/// moments are computed per sequence (in parallel if requested) and merged
/// in corpus order.
pub fn compute_stats_with(corpus: &[MotionSequence], exec: Execution) -> Result<FeatureStats> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty corpus".into()))?;
    let width = first.width();
    if width != FEATURE_DIM {
        first.require_full_width()?;
    }
    if let Some(bad) = corpus.iter().find(|m| m.width() != width) {
        return Err(Error::shape(format!(
            "corpus mixes widths {width} and {}",
            bad.width()
        )));
    }
    let partials = exec.map(corpus.len(), |i| Moments::of(&corpus[i]));
    let mut total = Moments {
        count: 0.0,
        mean: vec![0.0; width],
        m2: vec![0.0; width],
    };
    for p in &partials {
        total.merge(p);
    }
    if total.count == 0.0 {
        return Err(Error::InvalidArgument("corpus has no frames".into()));
    }
    let mean = total.mean.iter().map(|&m| m as f32).collect();
    let std = total
        .m2
        .iter()
        .map(|&m2| (m2 / total.count).sqrt() as f32)
        .collect();
    FeatureStats::new(mean, std)
}
