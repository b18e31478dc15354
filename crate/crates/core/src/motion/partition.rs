use super::{MotionSequence, Part, SkeletonMap, FEATURE_DIM, PARTS};
use crate::error::{Error, Result};

/// Six row-major part arrays sharing a frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSet {
    frames: [usize; 6],
    data: [Vec<f32>; 6],
}

impl PartSet {
    /// Builds a set from per-part `(frames, row-major data)` pairs,
    /// checking each width. Frame counts are checked by [`recompose`].
    pub fn from_parts(parts: [(usize, Vec<f32>); 6]) -> Result<Self> {
        let mut frames = [0; 6];
        let mut data: [Vec<f32>; 6] = Default::default();
        for (slot, (f, d)) in parts.into_iter().enumerate() {
            let width = PARTS[slot].width();
            if d.len() != f * width {
                return Err(Error::shape(format!(
                    "{}: {} values do not form {f}x{width}",
                    PARTS[slot],
                    d.len()
                )));
            }
            frames[slot] = f;
            data[slot] = d;
        }
        Ok(Self { frames, data })
    }

    pub fn zeros(frames: usize) -> Self {
        Self {
            frames: [frames; 6],
            data: PARTS.map(|p| vec![0.0; frames * p.width()]),
        }
    }

    pub fn get(&self, part: Part) -> &[f32] {
        &self.data[part.index()]
    }

    pub fn frames_of(&self, part: Part) -> usize {
        self.frames[part.index()]
    }

    /// Common frame count, or an error if the parts disagree.
    pub fn frames(&self) -> Result<usize> {
        let f = self.frames[0];
        if let Some(slot) = self.frames.iter().position(|&g| g != f) {
            return Err(Error::shape(format!(
                "frame mismatch: {} has {f} frames, {} has {}",
                PARTS[0], PARTS[slot], self.frames[slot]
            )));
        }
        Ok(f)
    }

    pub fn widths(&self) -> [usize; 6] {
        PARTS.map(Part::width)
    }
}

/// Splits a full-body clip into its six part arrays.
pub fn partition(m: &MotionSequence, skel: &SkeletonMap) -> Result<PartSet> {
    m.require_full_width()?;
    let frames = m.frames();
    let data = PARTS.map(|part| {
        let cols = skel.columns(part);
        let mut out = Vec::with_capacity(frames * cols.len());
        for f in 0..frames {
            let row = m.row(f);
            out.extend(cols.iter().map(|&c| row[c]));
        }
        out
    });
    Ok(PartSet {
        frames: [frames; 6],
        data,
    })
}

/// Inverse of [`partition`]: a pure column permutation, so the round trip
/// is bit-exact.
pub fn recompose(parts: &PartSet, skel: &SkeletonMap) -> Result<MotionSequence> {
    let frames = parts.frames()?;
    let mut out = vec![0.0f32; frames * FEATURE_DIM];
    for part in PARTS {
        let cols = skel.columns(part);
        let src = parts.get(part);
        let w = cols.len();
        for f in 0..frames {
            let dst = &mut out[f * FEATURE_DIM..(f + 1) * FEATURE_DIM];
            for (k, &c) in cols.iter().enumerate() {
                dst[c] = src[f * w + k];
            }
        }
    }
    MotionSequence::from_vec(frames, FEATURE_DIM, out)
}
