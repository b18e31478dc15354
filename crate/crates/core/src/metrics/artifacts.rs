//! Physical-plausibility measures on recovered global poses.
//!
//! * sliding: mean horizontal speed of the four foot joints over the
//!   frames where that joint's contact channel is set, in cm/s;
//! * penetration: mean over frames of `max(0, −lowest joint height)`, cm;
//! * floating: mean of `max(0, lowest joint height)` over frames with no
//!   contact channel set, cm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{joint_planar_speed, GlobalPose, KinematicsConfig};
use crate::motion::{Joint, CONTACT_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArtifactMetrics {
    pub sliding: f64,
    pub penetration: f64,
    pub floating: f64,
    /// False when no foot was ever in contact; `sliding` is then 0.
    pub sliding_defined: bool,
}

pub fn artifact_metrics(
    gp: &GlobalPose,
    contacts: &[[f32; CONTACT_CHANNELS]],
    cfg: &KinematicsConfig,
) -> Result<ArtifactMetrics> {
    let frames = gp.frames();
    if frames < 2 {
        return Err(Error::InvalidArgument("artifact metrics need at least two frames".into()));
    }
    if contacts.len() != frames {
        return Err(Error::shape(format!(
            "{} contact rows for {frames} frames",
            contacts.len()
        )));
    }
    let cm = cfg.cm_per_unit as f64;
    let (mut slide_sum, mut slide_count) = (0.0, 0usize);
    let (mut pen_sum, mut float_sum, mut float_count) = (0.0, 0.0, 0usize);
    for (f, flags) in contacts.iter().enumerate() {
        for (c, joint) in Joint::CONTACT_JOINTS.iter().enumerate() {
            if flags[c] > 0.5 {
                slide_sum += joint_planar_speed(gp, f, *joint) as f64 * gp.fps as f64 * cm;
                slide_count += 1;
            }
        }
        let low = gp.min_height(f) as f64;
        pen_sum += (-low).max(0.0) * cm;
        if flags.iter().all(|&v| v <= 0.5) {
            float_sum += low.max(0.0) * cm;
            float_count += 1;
        }
    }
    Ok(ArtifactMetrics {
        sliding: if slide_count > 0 { slide_sum / slide_count as f64 } else { 0.0 },
        penetration: pen_sum / frames as f64,
        floating: if float_count > 0 { float_sum / float_count as f64 } else { 0.0 },
        sliding_defined: slide_count > 0,
    })
}

/// Mean of per-clip metrics; `sliding` averages only clips where it is
/// defined.
pub fn mean_artifacts(items: &[ArtifactMetrics]) -> ArtifactMetrics {
    if items.is_empty() {
        return ArtifactMetrics::default();
    }
    let n = items.len() as f64;
    let sliding: Vec<f64> = items.iter().filter(|a| a.sliding_defined).map(|a| a.sliding).collect();
    ArtifactMetrics {
        sliding: if sliding.is_empty() { 0.0 } else { sliding.iter().sum::<f64>() / sliding.len() as f64 },
        penetration: items.iter().map(|a| a.penetration).sum::<f64>() / n,
        floating: items.iter().map(|a| a.floating).sum::<f64>() / n,
        sliding_defined: !sliding.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::NUM_JOINTS;

    fn pose(frames: usize, place: impl Fn(usize, usize) -> [f32; 3]) -> GlobalPose {
        let positions = (0..frames)
            .flat_map(|f| (0..NUM_JOINTS).map(move |j| (f, j)))
            .map(|(f, j)| place(f, j))
            .collect();
        GlobalPose::new(positions, 20.0).unwrap()
    }

    #[test]
    fn planted_feet() {
        let gp = pose(10, |_, j| [j as f32 * 0.1, if Joint::CONTACT_JOINTS.contains(&Joint(j)) { 0.0 } else { 0.5 }, 0.0]);
        let m = artifact_metrics(&gp, &[[1.0; 4]; 10], &KinematicsConfig::default()).unwrap();
        assert_eq!((m.sliding, m.penetration, m.floating), (0.0, 0.0, 0.0));
        assert!(m.sliding_defined);
    }

    #[test]
    fn sinking_body() {
        let gp = pose(4, |_, j| [0.0, if j == 10 { -0.02 } else { 0.3 }, 0.0]);
        let m = artifact_metrics(&gp, &[[0.0; 4]; 4], &KinematicsConfig::default()).unwrap();
        assert!((m.penetration - 2.0).abs() < 1e-5);
        assert_eq!(m.floating, 0.0);
        assert!(!m.sliding_defined);
    }

    #[test]
    fn contact_shape_mismatch() {
        let gp = pose(4, |_, _| [0.0; 3]);
        assert!(artifact_metrics(&gp, &[[0.0; 4]; 3], &KinematicsConfig::default()).is_err());
    }
}
