//! Procedural toy corpus: sixteen scripted clips (walks, turns, waves,
//! kicks, nods, combinations) animated by forward kinematics over a rest
//! skeleton and encoded into the 263-feature layout. Captions and the
//! intended body-part routing of each caption are known by construction.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kinematics::{detect_foot_contacts, rotate_heading, GlobalPose, KinematicsConfig};
use crate::motion::{
    layout, write_motion_file, Joint, MotionSequence, MotionSidecar, Part, DEFAULT_FPS, NUM_JOINTS,
};
use crate::text::{PartTexts, TextSource, IDLE_PHRASE};

/// File holding the ground-truth routing of every toy caption.
pub const ROUTINGS_FILE: &str = "routings.json";
pub const TOY_CLIPS: usize = 16;

/// Rest offsets from each joint's parent, metres. Facing +z, left is +x;
/// arms hang at the sides through the shoulder roll in [`Pose::rest`].
const OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.06, -0.09, 0.0],
    [-0.06, -0.09, 0.0],
    [0.0, 0.11, -0.01],
    [0.0, -0.39, 0.0],
    [0.0, -0.39, 0.0],
    [0.0, 0.13, 0.0],
    [0.0, -0.41, 0.0],
    [0.0, -0.41, 0.0],
    [0.0, 0.05, 0.01],
    [0.0, -0.03, 0.11],
    [0.0, -0.03, 0.11],
    [0.0, 0.21, 0.0],
    [0.07, 0.12, 0.0],
    [-0.07, 0.12, 0.0],
    [0.0, 0.10, 0.03],
    [0.10, 0.0, 0.0],
    [-0.10, 0.0, 0.0],
    [0.26, 0.0, 0.0],
    [-0.26, 0.0, 0.0],
    [0.25, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
];

const PELVIS_HEIGHT: f64 = 0.93;
const ARM_DOWN: f64 = 1.3;

/// Skeleton state at one instant.
#[derive(Debug, Clone)]
pub struct Pose {
    /// Pelvis `(x, y, z)` in world space.
    pub root: [f64; 3],
    /// Facing angle about +y, in the [`rotate_heading`] convention.
    pub heading: f64,
    /// Local joint rotations as `(x, y, z)` angles, applied z·y·x.
    pub angles: [[f64; 3]; NUM_JOINTS],
}

impl Pose {
    pub fn rest() -> Self {
        let mut angles = [[0.0; 3]; NUM_JOINTS];
        angles[Joint::LEFT_SHOULDER.0][2] = -ARM_DOWN;
        angles[Joint::RIGHT_SHOULDER.0][2] = ARM_DOWN;
        Self {
            root: [0.0, PELVIS_HEIGHT, 0.0],
            heading: 0.0,
            angles,
        }
    }

    fn rotation(&self, j: usize) -> Matrix3<f64> {
        let [x, y, z] = self.angles[j];
        *Rotation3::from_euler_angles(x, y, z).matrix()
    }

    /// World positions and local rotation matrices.
    fn forward_kinematics(&self) -> ([[f64; 3]; NUM_JOINTS], [Matrix3<f64>; NUM_JOINTS]) {
        let local: [Matrix3<f64>; NUM_JOINTS] = std::array::from_fn(|j| self.rotation(j));
        let mut global = [Matrix3::identity(); NUM_JOINTS];
        let mut body = [Vector3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let parent = Joint::PARENTS[j];
            if parent == usize::MAX {
                global[j] = local[j];
                body[j] = Vector3::zeros();
            } else {
                body[j] = body[parent] + global[parent] * Vector3::from(OFFSETS[j]);
                global[j] = global[parent] * local[j];
            }
        }
        let world = std::array::from_fn(|j| {
            let (x, z) = rotate_heading(self.heading, body[j].x, body[j].z);
            [x + self.root[0], body[j].y + self.root[1], z + self.root[2]]
        });
        (world, local)
    }
}

fn smooth(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Bell-shaped pulse centred at `c` with half-width `w`.
fn pulse(t: f64, c: f64, w: f64) -> f64 {
    let u = ((t - c) / w).abs();
    if u >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * u).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    WalkForward,
    WalkBackward,
    TurnAround,
    WaveRight,
    WaveLeft,
    KickLeft,
    KickRight,
    Nod,
    BendDown,
    Jump,
    Squat,
    RaiseArms,
    Stand,
    StepLeft,
    WalkAndWave,
    KickThenNod,
}

struct Script {
    id: &'static str,
    action: Action,
    caption: &'static str,
    paraphrase: &'static str,
    routing: [&'static str; 6],
}

const IDLE: &str = IDLE_PHRASE;

/// Routing order: head, left_arm, right_arm, torso, left_leg, right_leg.
const SCRIPTS: [Script; TOY_CLIPS] = [
    Script { id: "walk_forward", action: Action::WalkForward, caption: "a person walks forward", paraphrase: "someone walks straight ahead", routing: [IDLE, "swings back and forth", "swings back and forth", IDLE, "walks forward", "walks forward"] },
    Script { id: "walk_backward", action: Action::WalkBackward, caption: "a person walks backward slowly", paraphrase: "someone takes slow steps backward", routing: [IDLE, IDLE, IDLE, IDLE, "walks backward", "walks backward"] },
    Script { id: "turn_around", action: Action::TurnAround, caption: "a person turns around in place", paraphrase: "someone turns to face the other way", routing: [IDLE, IDLE, IDLE, "turns around", "steps in place", "steps in place"] },
    Script { id: "wave_right", action: Action::WaveRight, caption: "a person waves with the right hand", paraphrase: "someone raises the right arm and waves", routing: [IDLE, IDLE, "waves hand", IDLE, IDLE, IDLE] },
    Script { id: "wave_left", action: Action::WaveLeft, caption: "a person waves with the left hand", paraphrase: "someone raises the left arm and waves", routing: [IDLE, "waves hand", IDLE, IDLE, IDLE, IDLE] },
    Script { id: "kick_left", action: Action::KickLeft, caption: "a person kicks with the left leg", paraphrase: "someone kicks forward using the left leg", routing: [IDLE, IDLE, IDLE, IDLE, "kicks forward", IDLE] },
    Script { id: "kick_right", action: Action::KickRight, caption: "a person kicks with the right leg", paraphrase: "someone kicks forward using the right leg", routing: [IDLE, IDLE, IDLE, IDLE, IDLE, "kicks forward"] },
    Script { id: "nod", action: Action::Nod, caption: "a person nods the head", paraphrase: "someone nods a few times", routing: ["nods", IDLE, IDLE, IDLE, IDLE, IDLE] },
    Script { id: "bend_down", action: Action::BendDown, caption: "a person bends down at the waist", paraphrase: "someone leans forward and bends over", routing: [IDLE, IDLE, IDLE, "bends down", IDLE, IDLE] },
    Script { id: "jump", action: Action::Jump, caption: "a person jumps up and down", paraphrase: "someone jumps in place", routing: [IDLE, IDLE, IDLE, "jumps up", "jumps", "jumps"] },
    Script { id: "squat", action: Action::Squat, caption: "a person squats down and stands back up", paraphrase: "someone does a squat", routing: [IDLE, IDLE, IDLE, "lowers and rises", "bends the knee", "bends the knee"] },
    Script { id: "raise_arms", action: Action::RaiseArms, caption: "a person raises both arms above the head", paraphrase: "someone lifts both arms up high", routing: [IDLE, "raises arm", "raises arm", IDLE, IDLE, IDLE] },
    Script { id: "stand", action: Action::Stand, caption: "a person stands still", paraphrase: "someone stands without moving", routing: [IDLE, IDLE, IDLE, IDLE, IDLE, IDLE] },
    Script { id: "step_left", action: Action::StepLeft, caption: "a person steps to the left", paraphrase: "someone side steps to the left", routing: [IDLE, IDLE, IDLE, IDLE, "steps to the left", "steps to the left"] },
    Script { id: "walk_and_wave", action: Action::WalkAndWave, caption: "a person walks forward while waving the right hand", paraphrase: "someone waves the right hand while walking", routing: [IDLE, "swings back and forth", "waves hand", IDLE, "walks forward", "walks forward"] },
    Script { id: "kick_then_nod", action: Action::KickThenNod, caption: "a person kicks with the left leg then nods the head", paraphrase: "someone kicks using the left leg and then nods", routing: ["nods", IDLE, IDLE, IDLE, "kicks forward", IDLE] },
];

fn gait(p: &mut Pose, t: f64, amplitude: f64, direction: f64) {
    let phase = 2.0 * PI * 1.6 * t;
    let swing = amplitude * phase.sin();
    p.angles[Joint::LEFT_HIP.0][0] = -swing * direction;
    p.angles[Joint::RIGHT_HIP.0][0] = swing * direction;
    p.angles[Joint::LEFT_KNEE.0][0] = 0.6 * amplitude * (phase.cos().max(0.0));
    p.angles[Joint::RIGHT_KNEE.0][0] = 0.6 * amplitude * ((-phase.cos()).max(0.0));
    p.root[1] = PELVIS_HEIGHT - 0.01 * (1.0 - (2.0 * phase).cos());
}

fn arm_swing(p: &mut Pose, t: f64) {
    let swing = 0.35 * (2.0 * PI * 1.6 * t).sin();
    p.angles[Joint::LEFT_SHOULDER.0][1] = swing;
    p.angles[Joint::RIGHT_SHOULDER.0][1] = swing;
}

fn wave(p: &mut Pose, t: f64, right: bool) {
    let lift = smooth(t / 0.6);
    let (shoulder, elbow, sign) = if right {
        (Joint::RIGHT_SHOULDER.0, Joint::RIGHT_ELBOW.0, 1.0)
    } else {
        (Joint::LEFT_SHOULDER.0, Joint::LEFT_ELBOW.0, -1.0)
    };
    p.angles[shoulder][2] = sign * (ARM_DOWN - 2.4 * lift);
    p.angles[shoulder][1] = 0.0;
    p.angles[elbow][2] = -sign * lift * (0.9 + 0.5 * (2.0 * PI * 1.5 * t).sin());
}

fn kick(p: &mut Pose, t: f64, centre: f64, left: bool) {
    let k = pulse(t, centre, 0.5);
    let (hip, knee) = if left {
        (Joint::LEFT_HIP.0, Joint::LEFT_KNEE.0)
    } else {
        (Joint::RIGHT_HIP.0, Joint::RIGHT_KNEE.0)
    };
    p.angles[hip][0] = -1.2 * k;
    p.angles[knee][0] = 0.8 * pulse(t, centre - 0.2, 0.3);
}

fn nod(p: &mut Pose, t: f64, start: f64) {
    if t > start {
        p.angles[Joint::NECK.0][0] = 0.35 * (2.0 * PI * 1.2 * (t - start)).sin().abs();
    }
}

fn animate(action: Action, t: f64, duration: f64) -> Pose {
    let mut p = Pose::rest();
    match action {
        Action::WalkForward => {
            gait(&mut p, t, 0.45, 1.0);
            arm_swing(&mut p, t);
            p.root[2] = 1.1 * t;
        }
        Action::WalkBackward => {
            gait(&mut p, t, 0.3, -1.0);
            p.root[2] = -0.5 * t;
        }
        Action::TurnAround => {
            p.heading = PI * smooth(t / duration);
            gait(&mut p, t, 0.15, 1.0);
            p.angles[Joint::SPINE1.0][1] = 0.2 * (PI * t / duration).sin();
        }
        Action::WaveRight => wave(&mut p, t, true),
        Action::WaveLeft => wave(&mut p, t, false),
        Action::KickLeft => kick(&mut p, t, duration * 0.5, true),
        Action::KickRight => kick(&mut p, t, duration * 0.5, false),
        Action::Nod => nod(&mut p, t, 0.3),
        Action::BendDown => {
            let b = smooth(t / (0.4 * duration)) * (1.0 - smooth((t - 0.7 * duration) / (0.3 * duration)));
            p.angles[Joint::SPINE1.0][0] = 0.5 * b;
            p.angles[Joint::SPINE2.0][0] = 0.4 * b;
        }
        Action::Jump => {
            let cycle = (t / 1.0).fract();
            let air = pulse(cycle, 0.5, 0.25);
            let crouch = pulse(cycle, 0.2, 0.15) + pulse(cycle, 0.8, 0.15);
            p.root[1] = PELVIS_HEIGHT + 0.25 * air - 0.12 * crouch;
            for (hip, knee) in [(Joint::LEFT_HIP.0, Joint::LEFT_KNEE.0), (Joint::RIGHT_HIP.0, Joint::RIGHT_KNEE.0)] {
                p.angles[hip][0] = -0.6 * crouch;
                p.angles[knee][0] = 1.0 * crouch;
            }
        }
        Action::Squat => {
            let s = pulse(t, duration * 0.5, duration * 0.4);
            p.root[1] = PELVIS_HEIGHT - 0.3 * s;
            for (hip, knee, ankle) in [
                (Joint::LEFT_HIP.0, Joint::LEFT_KNEE.0, Joint::LEFT_ANKLE.0),
                (Joint::RIGHT_HIP.0, Joint::RIGHT_KNEE.0, Joint::RIGHT_ANKLE.0),
            ] {
                p.angles[hip][0] = -1.1 * s;
                p.angles[knee][0] = 1.9 * s;
                p.angles[ankle][0] = -0.8 * s;
            }
            p.angles[Joint::SPINE1.0][0] = 0.3 * s;
        }
        Action::RaiseArms => {
            let lift = smooth(t / (0.5 * duration));
            p.angles[Joint::LEFT_SHOULDER.0][2] = -ARM_DOWN + 2.8 * lift;
            p.angles[Joint::RIGHT_SHOULDER.0][2] = ARM_DOWN - 2.8 * lift;
        }
        Action::Stand => {
            p.angles[Joint::SPINE1.0][0] = 0.02 * (2.0 * PI * 0.3 * t).sin();
        }
        Action::StepLeft => {
            let phase = 2.0 * PI * 1.2 * t;
            p.angles[Joint::LEFT_HIP.0][2] = 0.25 * phase.sin().max(0.0);
            p.angles[Joint::RIGHT_HIP.0][2] = -0.25 * (-phase.sin()).max(0.0);
            p.root[0] = 0.35 * t;
        }
        Action::WalkAndWave => {
            gait(&mut p, t, 0.45, 1.0);
            arm_swing(&mut p, t);
            wave(&mut p, t, true);
            p.root[2] = 1.1 * t;
        }
        Action::KickThenNod => {
            kick(&mut p, t, duration * 0.3, true);
            nod(&mut p, t, duration * 0.6);
        }
    }
    p
}

/// Encodes a pose sequence (starting at the origin facing heading 0) into
/// the feature layout, with contacts detected under `kin`.
pub fn encode_poses(poses: &[Pose], kin: &KinematicsConfig) -> Result<MotionSequence> {
    let frames = poses.len();
    if frames < 2 {
        return Err(Error::InvalidArgument("need at least two poses".into()));
    }
    let fk: Vec<_> = poses.iter().map(Pose::forward_kinematics).collect();
    let positions: Vec<[f32; 3]> = fk
        .iter()
        .flat_map(|(w, _)| w.iter().map(|p| [p[0] as f32, p[1] as f32, p[2] as f32]))
        .collect();
    let gp = GlobalPose::new(positions, kin.fps)?;
    let contacts = detect_foot_contacts(&gp, kin.contact_velocity, kin.contact_height)?;
    let mut m = MotionSequence::zeros(frames);
    for f in 0..frames {
        let next = (f + 1).min(frames - 1);
        let prev = if f + 1 < frames { f } else { f - 1 };
        let (p, q) = (&poses[prev], &poses[prev + 1]);
        let heading = poses[f].heading;
        let row = m.row_mut(f);
        row[layout::ROOT_ANGULAR_VELOCITY] = (q.heading - p.heading) as f32;
        let (vx, vz) = rotate_heading(-p.heading, q.root[0] - p.root[0], q.root[2] - p.root[2]);
        row[layout::ROOT_LINEAR_VELOCITY] = vx as f32;
        row[layout::ROOT_LINEAR_VELOCITY + 1] = vz as f32;
        let root = poses[f].root;
        row[layout::ROOT_HEIGHT] = root[1] as f32;
        let (world, local) = &fk[f];
        let (world_next, _) = &fk[next];
        let (world_prev, _) = &fk[prev];
        for j in 0..NUM_JOINTS {
            if j > 0 {
                let (x, z) = rotate_heading(-heading, world[j][0] - root[0], world[j][2] - root[2]);
                let c = layout::position(j);
                row[c] = x as f32;
                row[c + 1] = (world[j][1] - root[1]) as f32;
                row[c + 2] = z as f32;
                let r = &local[j];
                let c = layout::rotation(j);
                for (k, v) in [r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]].into_iter().enumerate() {
                    row[c + k] = v as f32;
                }
            }
            let (a, b) = if f + 1 < frames { (world, world_next) } else { (world_prev, world) };
            let (vx, vz) = rotate_heading(-heading, b[j][0] - a[j][0], b[j][2] - a[j][2]);
            let c = layout::velocity(j);
            row[c] = vx as f32;
            row[c + 1] = (b[j][1] - a[j][1]) as f32;
            row[c + 2] = vz as f32;
        }
        row[layout::CONTACTS..layout::END].copy_from_slice(&contacts[f]);
    }
    Ok(m)
}

/// One generated clip.
#[derive(Debug, Clone)]
pub struct ToyClip {
    pub id: String,
    pub motion: MotionSequence,
    pub captions: Vec<String>,
    /// Intended routing of every caption of this clip.
    pub routing: PartTexts,
}

/// Generates the sixteen clips in memory. `seed` picks a small constant
/// per-clip offset for every joint angle (a slightly different posture).
pub fn toy_clips(seed: u64) -> Result<Vec<ToyClip>> {
    let kin = KinematicsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SCRIPTS
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let frames = 64 + (i % 3) * 16;
            let duration = frames as f64 / DEFAULT_FPS as f64;
            let jitter: Vec<f64> = (0..NUM_JOINTS * 3).map(|_| rng.random_range(-0.02..0.02)).collect();
            let poses: Vec<Pose> = (0..frames)
                .map(|f| {
                    let mut p = animate(s.action, f as f64 / DEFAULT_FPS as f64, duration);
                    for (a, d) in p.angles.iter_mut().flatten().zip(&jitter).skip(3) {
                        *a += d;
                    }
                    p
                })
                .collect();
            let routing = PartTexts::from_fn(TextSource::Manual, |part: Part| s.routing[part.index()].to_string());
            Ok(ToyClip {
                id: format!("{i:02}_{}", s.id),
                motion: encode_poses(&poses, &kin)?,
                captions: vec![s.caption.to_string(), s.paraphrase.to_string()],
                routing,
            })
        })
        .collect()
}

/// Writes the corpus in the dataset layout under `root`: clips, caption
/// files and `routings.json` (ground-truth routings keyed by caption).
/// Decompositions themselves are left to the decompose step.
pub fn write_toy_corpus(root: &Path, seed: u64) -> Result<Vec<ToyClip>> {
    let clips = toy_clips(seed)?;
    let motions = root.join("motions");
    let texts = root.join("texts");
    fs::create_dir_all(&texts).map_err(|e| Error::io(&texts, e))?;
    let mut routings = BTreeMap::new();
    for clip in &clips {
        write_motion_file(&motions, &clip.motion, &MotionSidecar::new(&clip.id, &clip.motion))?;
        let path = texts.join(format!("{}.txt", clip.id));
        let body: String = clip.captions.iter().map(|c| format!("{c}##0.0#0.0\n")).collect();
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        for c in &clip.captions {
            routings.insert(c.clone(), clip.routing.clone());
        }
    }
    let path = root.join(ROUTINGS_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&routings)?).map_err(|e| Error::io(&path, e))?;
    Ok(clips)
}
