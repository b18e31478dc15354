//! Full-body motion representation.
//!
//! A clip is an `F x 263` row-major array of per-frame features in the
//! HumanML3D layout:
//!
//! | columns   | block | contents                                        |
//! |-----------|-------|-------------------------------------------------|
//! | 0         | ṙ     | root angular velocity about +y (rad/frame)      |
//! | 1..3      | v_root| root planar velocity (x, z) in the heading frame|
//! | 3         | h     | root height                                     |
//! | 4..67     | p     | root-relative positions of joints 1..22         |
//! | 67..193   | r     | 6D local rotations of joints 1..22              |
//! | 193..259  | v     | heading-frame velocities of joints 0..22        |
//! | 259..263  | c     | foot contacts (l ankle, l foot, r ankle, r foot)|

mod io;
mod partition;
mod skeleton;
mod stats;

pub use io::{
    parse_caption_line, read_caption_file, read_motion_file, write_motion_file, CaptionLine,
    MotionSidecar,
};
pub use partition::{partition, recompose, PartSet};
pub use skeleton::{Joint, Part, SkeletonMap, PARTS};
pub use stats::{compute_stats, compute_stats_with, FeatureStats, STD_FLOOR};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 22;
pub const FEATURE_DIM: usize = 263;
pub const CONTACT_CHANNELS: usize = 4;
pub const DEFAULT_FPS: f32 = 20.0;

/// Column offsets of each feature block.
pub mod layout {
    use super::NUM_JOINTS;

    pub const ROOT_ANGULAR_VELOCITY: usize = 0;
    pub const ROOT_LINEAR_VELOCITY: usize = 1;
    pub const ROOT_HEIGHT: usize = 3;
    pub const POSITIONS: usize = 4;
    pub const ROTATIONS: usize = POSITIONS + (NUM_JOINTS - 1) * 3;
    pub const VELOCITIES: usize = ROTATIONS + (NUM_JOINTS - 1) * 6;
    pub const CONTACTS: usize = VELOCITIES + NUM_JOINTS * 3;
    pub const END: usize = CONTACTS + 4;

    /// First column of joint `j`'s root-relative position (`j >= 1`).
    pub const fn position(j: usize) -> usize {
        POSITIONS + (j - 1) * 3
    }

    /// First column of joint `j`'s 6D rotation (`j >= 1`).
    pub const fn rotation(j: usize) -> usize {
        ROTATIONS + (j - 1) * 6
    }

    /// First column of joint `j`'s local velocity.
    pub const fn velocity(j: usize) -> usize {
        VELOCITIES + j * 3
    }

    const _: () = assert!(END == super::FEATURE_DIM);
    const _: () = assert!(1 + 2 + 1 + 21 * 3 + 21 * 6 + 22 * 3 + 4 == super::FEATURE_DIM);
}

/// Row-major `frames x width` motion array.
///
/// The width is carried explicitly so malformed inputs can be represented and
/// reported by [`validate`]; every model-facing operation requires
/// [`FEATURE_DIM`] columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    frames: usize,
    width: usize,
    data: Vec<f32>,
}

impl MotionSequence {
    pub fn from_vec(frames: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * width {
            return Err(Error::shape(format!(
                "{} values cannot form a {frames}x{width} array",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            width,
            data,
        })
    }

    pub fn zeros(frames: usize) -> Self {
        Self {
            frames,
            width: FEATURE_DIM,
            data: vec![0.0; frames * FEATURE_DIM],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let width = rows.first().map_or(FEATURE_DIM, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("ragged rows"));
        }
        Self::from_vec(rows.len(), width, rows.concat())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.data[frame * self.width..(frame + 1) * self.width]
    }

    pub fn row_mut(&mut self, frame: usize) -> &mut [f32] {
        &mut self.data[frame * self.width..(frame + 1) * self.width]
    }

    pub fn get(&self, frame: usize, col: usize) -> f32 {
        self.data[frame * self.width + col]
    }

    pub fn set(&mut self, frame: usize, col: usize, value: f32) {
        self.data[frame * self.width + col] = value;
    }

    /// Copies frames `start..end`.
    pub fn crop(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(Error::InvalidArgument(format!(
                "crop {start}..{end} outside 0..{}",
                self.frames
            )));
        }
        Ok(Self {
            frames: end - start,
            width: self.width,
            data: self.data[start * self.width..end * self.width].to_vec(),
        })
    }

    /// Projects the contact block onto `[0, 1]`. Regressed contacts can
    /// overshoot slightly; the representation requires indicator values.
    pub fn clamp_contacts(&mut self) {
        if self.width != FEATURE_DIM {
            return;
        }
        for f in 0..self.frames {
            for v in &mut self.row_mut(f)[layout::CONTACTS..layout::END] {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    pub(crate) fn require_full_width(&self) -> Result<()> {
        if self.width != FEATURE_DIM {
            return Err(Error::shape(format!(
                "motion has {} features, expected {FEATURE_DIM}",
                self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Width { expected: usize, found: usize },
    Finiteness { frame: usize, col: usize },
    ContactRange { frame: usize, col: usize, value: f32 },
    NoFrames,
}

impl Violation {
    /// Short check name: `width`, `finiteness`, `contact_range` or `frames`.
    pub fn check(&self) -> &'static str {
        match self {
            Violation::Width { .. } => "width",
            Violation::Finiteness { .. } => "finiteness",
            Violation::ContactRange { .. } => "contact_range",
            Violation::NoFrames => "frames",
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Width { expected, found } => {
                write!(f, "width: expected {expected} features, found {found}")
            }
            Violation::Finiteness { frame, col } => {
                write!(f, "finiteness: non-finite value at frame {frame}, column {col}")
            }
            Violation::ContactRange { frame, col, value } => write!(
                f,
                "contact_range: contact {value} outside [0,1] at frame {frame}, column {col}"
            ),
            Violation::NoFrames => write!(f, "frames: sequence has no frames"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, check: &str) -> bool {
        self.violations.iter().any(|v| v.check() == check)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
            Err(Error::Validation(msgs.join("; ")))
        }
    }
}

/// Checks width, finiteness and the contact range. Only the first
/// non-finite value is reported; contact violations are reported per cell.
pub fn validate(m: &MotionSequence) -> ValidationReport {
    let mut violations = Vec::new();
    if m.frames == 0 {
        violations.push(Violation::NoFrames);
    }
    if m.width != FEATURE_DIM {
        violations.push(Violation::Width {
            expected: FEATURE_DIM,
            found: m.width,
        });
    }
    if let Some(idx) = m.data.iter().position(|v| !v.is_finite()) {
        violations.push(Violation::Finiteness {
            frame: idx / m.width.max(1),
            col: idx % m.width.max(1),
        });
    }
    if m.width == FEATURE_DIM {
        for frame in 0..m.frames {
            for col in layout::CONTACTS..layout::END {
                let value = m.get(frame, col);
                if value.is_finite() && !(0.0..=1.0).contains(&value) {
                    violations.push(Violation::ContactRange { frame, col, value });
                }
            }
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_clip_is_valid() {
        assert!(validate(&MotionSequence::zeros(10)).is_valid());
    }

    #[test]
    fn narrow_clip_reports_width() {
        let m = MotionSequence::from_vec(10, 262, vec![0.0; 2620]).unwrap();
        let report = validate(&m);
        assert!(!report.is_valid());
        assert!(report.has("width"));
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn nan_reports_finiteness() {
        let mut m = MotionSequence::zeros(10);
        m.set(3, 100, f32::NAN);
        let report = validate(&m);
        assert_eq!(
            report.violations,
            vec![Violation::Finiteness { frame: 3, col: 100 }]
        );
    }

    #[test]
    fn contacts_out_of_range() {
        let mut m = MotionSequence::zeros(2);
        m.set(1, layout::CONTACTS + 2, 1.5);
        assert!(validate(&m).has("contact_range"));
        assert!(validate(&m).into_result().is_err());
    }

    #[test]
    fn block_offsets() {
        assert_eq!(layout::ROTATIONS, 67);
        assert_eq!(layout::VELOCITIES, 193);
        assert_eq!(layout::CONTACTS, 259);
        assert_eq!(layout::position(21), 64);
        assert_eq!(layout::rotation(21), 187);
        assert_eq!(layout::velocity(21), 256);
    }

    #[test]
    fn crop_bounds() {
        let m = MotionSequence::zeros(5);
        assert_eq!(m.crop(1, 4).unwrap().frames(), 3);
        assert!(m.crop(3, 3).is_err());
        assert!(m.crop(0, 6).is_err());
    }
}
