//! Global joint positions from the feature representation, and foot
//! contact detection.
//!
//! Recovery integrates the root with forward Euler: the heading at frame
//! `k` is the sum of `ṙ` over frames `0..k`, and the planar root position
//! is the sum of the heading-rotated `v_root` over the same frames. Joint
//! positions `p` are rotated by the frame's heading and offset by the root
//! (x, h, z). Rotations `r` are not used. The ground plane is `y = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{layout, Joint, MotionSequence, CONTACT_CHANNELS, DEFAULT_FPS, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicsConfig {
    pub fps: f32,
    pub cm_per_unit: f32,
    /// Contact requires joint speed below this (length units per frame).
    pub contact_velocity: f32,
    /// Contact requires joint height below this (length units).
    pub contact_height: f32,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self {
            fps: DEFAULT_FPS,
            cm_per_unit: 100.0,
            contact_velocity: 0.002,
            contact_height: 0.05,
        }
    }
}

/// World-space positions, `frames x 22` joints.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPose {
    pub positions: Vec<[f32; 3]>,
    pub fps: f32,
}

impl GlobalPose {
    pub fn new(positions: Vec<[f32; 3]>, fps: f32) -> Result<Self> {
        if positions.is_empty() || !positions.len().is_multiple_of(NUM_JOINTS) {
            return Err(Error::shape(format!(
                "{} positions are not a whole number of 22-joint frames",
                positions.len()
            )));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite joint position".into()));
        }
        Ok(Self { positions, fps })
    }

    pub fn frames(&self) -> usize {
        self.positions.len() / NUM_JOINTS
    }

    pub fn joint(&self, frame: usize, joint: Joint) -> [f32; 3] {
        self.positions[frame * NUM_JOINTS + joint.0]
    }

    pub fn frame(&self, frame: usize) -> &[[f32; 3]] {
        &self.positions[frame * NUM_JOINTS..(frame + 1) * NUM_JOINTS]
    }

    /// Lowest joint height in a frame.
    pub fn min_height(&self, frame: usize) -> f32 {
        self.frame(frame)
            .iter()
            .map(|p| p[1])
            .fold(f32::INFINITY, f32::min)
    }

    pub fn translate(&mut self, offset: [f32; 3]) {
        for p in &mut self.positions {
            for (v, o) in p.iter_mut().zip(offset) {
                *v += o;
            }
        }
    }
}

/// Rotates a heading-frame planar vector `(x, z)` by `heading` about +y.
pub fn rotate_heading(heading: f64, x: f64, z: f64) -> (f64, f64) {
    let (s, c) = heading.sin_cos();
    (c * x + s * z, -s * x + c * z)
}

pub fn recover_global_positions(m: &MotionSequence, fps: f32) -> Result<GlobalPose> {
    recover_global_positions_from(m, fps, 0.0)
}

/// [`recover_global_positions`] starting from an arbitrary initial heading.
pub fn recover_global_positions_from(
    m: &MotionSequence,
    fps: f32,
    initial_heading: f64,
) -> Result<GlobalPose> {
    m.require_full_width()?;
    let frames = m.frames();
    let mut positions = Vec::with_capacity(frames * NUM_JOINTS);
    let mut heading = initial_heading;
    let (mut root_x, mut root_z) = (0.0f64, 0.0f64);
    for f in 0..frames {
        let row = m.row(f);
        let h = f64::from(row[layout::ROOT_HEIGHT]);
        positions.push([root_x as f32, h as f32, root_z as f32]);
        for j in 1..NUM_JOINTS {
            let c = layout::position(j);
            let (x, z) = rotate_heading(heading, f64::from(row[c]), f64::from(row[c + 2]));
            positions.push([
                (x + root_x) as f32,
                (f64::from(row[c + 1]) + h) as f32,
                (z + root_z) as f32,
            ]);
        }
        let (dx, dz) = rotate_heading(
            heading,
            f64::from(row[layout::ROOT_LINEAR_VELOCITY]),
            f64::from(row[layout::ROOT_LINEAR_VELOCITY + 1]),
        );
        root_x += dx;
        root_z += dz;
        heading += f64::from(row[layout::ROOT_ANGULAR_VELOCITY]);
    }
    GlobalPose::new(positions, fps)
}

/// Frame-to-frame speed of a joint: forward difference, with the last
/// frame reusing the previous difference.
pub fn joint_speed(gp: &GlobalPose, frame: usize, joint: Joint) -> f32 {
    let n = gp.frames();
    let k = frame.min(n - 2);
    let a = gp.joint(k, joint);
    let b = gp.joint(k + 1, joint);
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
}

/// Horizontal (x-z) speed, same differencing as [`joint_speed`].
pub fn joint_planar_speed(gp: &GlobalPose, frame: usize, joint: Joint) -> f32 {
    let n = gp.frames();
    let k = frame.min(n - 2);
    let a = gp.joint(k, joint);
    let b = gp.joint(k + 1, joint);
    ((b[0] - a[0]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
}

/// Per-frame contact flags for (left ankle, left foot, right ankle, right foot).
pub fn detect_foot_contacts(
    gp: &GlobalPose,
    velocity_threshold: f32,
    height_threshold: f32,
) -> Result<Vec<[f32; CONTACT_CHANNELS]>> {
    if gp.frames() < 2 {
        return Err(Error::InvalidArgument(
            "contact detection needs at least two frames".into(),
        ));
    }
    Ok((0..gp.frames())
        .map(|f| {
            Joint::CONTACT_JOINTS.map(|j| {
                let planted = joint_speed(gp, f, j) < velocity_threshold
                    && gp.joint(f, j)[1] < height_threshold;
                if planted {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect())
}
