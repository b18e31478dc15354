use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::{layout, CONTACT_CHANNELS, FEATURE_DIM, NUM_JOINTS};
use crate::error::{Error, Result};

/// Index into the 22-joint SMPL skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Joint(pub usize);

impl Joint {
    pub const PELVIS: Joint = Joint(0);
    pub const LEFT_HIP: Joint = Joint(1);
    pub const RIGHT_HIP: Joint = Joint(2);
    pub const SPINE1: Joint = Joint(3);
    pub const LEFT_KNEE: Joint = Joint(4);
    pub const RIGHT_KNEE: Joint = Joint(5);
    pub const SPINE2: Joint = Joint(6);
    pub const LEFT_ANKLE: Joint = Joint(7);
    pub const RIGHT_ANKLE: Joint = Joint(8);
    pub const SPINE3: Joint = Joint(9);
    pub const LEFT_FOOT: Joint = Joint(10);
    pub const RIGHT_FOOT: Joint = Joint(11);
    pub const NECK: Joint = Joint(12);
    pub const LEFT_COLLAR: Joint = Joint(13);
    pub const RIGHT_COLLAR: Joint = Joint(14);
    pub const HEAD: Joint = Joint(15);
    pub const LEFT_SHOULDER: Joint = Joint(16);
    pub const RIGHT_SHOULDER: Joint = Joint(17);
    pub const LEFT_ELBOW: Joint = Joint(18);
    pub const RIGHT_ELBOW: Joint = Joint(19);
    pub const LEFT_WRIST: Joint = Joint(20);
    pub const RIGHT_WRIST: Joint = Joint(21);

    /// Joints owning the four contact channels, in channel order.
    pub const CONTACT_JOINTS: [Joint; CONTACT_CHANNELS] = [
        Joint::LEFT_ANKLE,
        Joint::LEFT_FOOT,
        Joint::RIGHT_ANKLE,
        Joint::RIGHT_FOOT,
    ];

    pub const NAMES: [&'static str; NUM_JOINTS] = [
        "pelvis",
        "left_hip",
        "right_hip",
        "spine1",
        "left_knee",
        "right_knee",
        "spine2",
        "left_ankle",
        "right_ankle",
        "spine3",
        "left_foot",
        "right_foot",
        "neck",
        "left_collar",
        "right_collar",
        "head",
        "left_shoulder",
        "right_shoulder",
        "left_elbow",
        "right_elbow",
        "left_wrist",
        "right_wrist",
    ];

    /// Kinematic parent of each joint (`usize::MAX` for the root).
    pub const PARENTS: [usize; NUM_JOINTS] = [
        usize::MAX,
        0,
        0,
        0,
        1,
        2,
        3,
        4,
        5,
        6,
        7,
        8,
        9,
        9,
        9,
        12,
        13,
        14,
        16,
        17,
        18,
        19,
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES[self.0]
    }
}

/// The six body parts, in the fixed slot order used by every part-indexed
/// array in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Head,
    LeftArm,
    RightArm,
    Torso,
    LeftLeg,
    RightLeg,
}

pub const PARTS: [Part; 6] = [
    Part::Head,
    Part::LeftArm,
    Part::RightArm,
    Part::Torso,
    Part::LeftLeg,
    Part::RightLeg,
];

impl Part {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Head => "head",
            Part::LeftArm => "left_arm",
            Part::RightArm => "right_arm",
            Part::Torso => "torso",
            Part::LeftLeg => "left_leg",
            Part::RightLeg => "right_leg",
        }
    }

    /// Accepts `left_arm`, `Left Arm`, `left-arm`, `LEFTARM`, ...
    pub fn from_name(name: &str) -> Option<Part> {
        let key: String = name
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        PARTS.into_iter().find(|p| p.name().replace('_', "") == key)
    }

    /// Feature width of the part's motion slice.
    pub fn width(self) -> usize {
        match self {
            Part::Head => 24,
            Part::LeftArm | Part::RightArm => 48,
            Part::Torso => 43,
            Part::LeftLeg | Part::RightLeg => 50,
        }
    }
}

impl std::fmt::Display for Part {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Joint-to-part assignment and the derived column permutation.
///
/// Standard assignment on the SMPL 22-joint ordering:
///
/// | part      | joints                                   |
/// |-----------|------------------------------------------|
/// | head      | 12 neck, 15 head                         |
/// | left_arm  | 13 collar, 16 shoulder, 18 elbow, 20 wrist |
/// | right_arm | 14 collar, 17 shoulder, 19 elbow, 21 wrist |
/// | torso     | 0 pelvis, 3 spine1, 6 spine2, 9 spine3   |
/// | left_leg  | 1 hip, 4 knee, 7 ankle, 10 foot          |
/// | right_leg | 2 hip, 5 knee, 8 ankle, 11 foot          |
///
/// Within a part, columns are `[p | r | v | extras]` with joints ascending.
/// The torso's extras are `ṙ, v_root.x, v_root.z, h`; each leg's extras are
/// its (ankle, foot) contact channels. The root has no `p`/`r` entries.
#[derive(Debug, Clone)]
pub struct SkeletonMap {
    assignment: [Part; NUM_JOINTS],
    joints: [Vec<Joint>; 6],
    columns: [Vec<usize>; 6],
    /// `inverse[col] = (part slot, offset within part)`.
    inverse: Vec<(usize, usize)>,
}

static STANDARD: LazyLock<SkeletonMap> = LazyLock::new(|| {
    SkeletonMap::from_assignment(SkeletonMap::SMPL_ASSIGNMENT)
        .expect("standard SMPL part assignment must produce widths 24/48/48/43/50/50")
});

impl SkeletonMap {
    pub const SMPL_ASSIGNMENT: [Part; NUM_JOINTS] = {
        use Part::*;
        [
            Torso, LeftLeg, RightLeg, Torso, LeftLeg, RightLeg, Torso, LeftLeg, RightLeg, Torso,
            LeftLeg, RightLeg, Head, LeftArm, RightArm, Head, LeftArm, RightArm, LeftArm,
            RightArm, LeftArm, RightArm,
        ]
    };

    /// Shared instance of the standard SMPL assignment.
    pub fn standard() -> &'static SkeletonMap {
        &STANDARD
    }

    /// Builds the permutation for an assignment, checking joint counts
    /// (2/4/4/4/4/4, root in torso), contact ownership and the part widths
    /// (24, 48, 48, 43, 50, 50).
    pub fn from_assignment(assignment: [Part; NUM_JOINTS]) -> Result<Self> {
        if assignment[0] != Part::Torso {
            return Err(Error::shape("root joint must belong to the torso"));
        }
        let mut joints: [Vec<Joint>; 6] = Default::default();
        for (j, part) in assignment.iter().enumerate() {
            joints[part.index()].push(Joint(j));
        }
        for part in PARTS {
            let expected = if part == Part::Head { 2 } else { 4 };
            if joints[part.index()].len() != expected {
                return Err(Error::shape(format!(
                    "{part} owns {} joints, expected {expected}",
                    joints[part.index()].len()
                )));
            }
        }
        let contact_owner = |channel: usize| assignment[Joint::CONTACT_JOINTS[channel].0];
        if contact_owner(0) != Part::LeftLeg
            || contact_owner(1) != Part::LeftLeg
            || contact_owner(2) != Part::RightLeg
            || contact_owner(3) != Part::RightLeg
        {
            return Err(Error::shape("contact joints must belong to their legs"));
        }

        let mut columns: [Vec<usize>; 6] = Default::default();
        for part in PARTS {
            let js = &joints[part.index()];
            let cols = &mut columns[part.index()];
            for j in js.iter().filter(|j| j.0 != 0) {
                cols.extend(layout::position(j.0)..layout::position(j.0) + 3);
            }
            for j in js.iter().filter(|j| j.0 != 0) {
                cols.extend(layout::rotation(j.0)..layout::rotation(j.0) + 6);
            }
            for j in js {
                cols.extend(layout::velocity(j.0)..layout::velocity(j.0) + 3);
            }
            match part {
                Part::Torso => cols.extend(layout::ROOT_ANGULAR_VELOCITY..layout::POSITIONS),
                Part::LeftLeg => cols.extend(layout::CONTACTS..layout::CONTACTS + 2),
                Part::RightLeg => cols.extend(layout::CONTACTS + 2..layout::END),
                _ => {}
            }
            if cols.len() != part.width() {
                return Err(Error::shape(format!(
                    "{part} spans {} columns, expected {}",
                    cols.len(),
                    part.width()
                )));
            }
        }

        let total: usize = columns.iter().map(Vec::len).sum();
        if total != FEATURE_DIM {
            return Err(Error::shape(format!("parts span {total} columns")));
        }
        let mut inverse = vec![(usize::MAX, 0); FEATURE_DIM];
        for (slot, cols) in columns.iter().enumerate() {
            for (offset, &c) in cols.iter().enumerate() {
                if inverse[c].0 != usize::MAX {
                    return Err(Error::shape(format!("column {c} assigned twice")));
                }
                inverse[c] = (slot, offset);
            }
        }

        Ok(Self {
            assignment,
            joints,
            columns,
            inverse,
        })
    }

    pub fn part_of(&self, joint: Joint) -> Part {
        self.assignment[joint.0]
    }

    pub fn joints(&self, part: Part) -> &[Joint] {
        &self.joints[part.index()]
    }

    /// Full-body column indices of a part, in part-local order.
    pub fn columns(&self, part: Part) -> &[usize] {
        &self.columns[part.index()]
    }

    /// Where a full-body column lands: `(part, offset within the part)`.
    pub fn locate(&self, column: usize) -> (Part, usize) {
        let (slot, offset) = self.inverse[column];
        (PARTS[slot], offset)
    }

    /// The concatenated permutation `[head cols | left_arm cols | ...]`.
    pub fn permutation(&self) -> Vec<usize> {
        self.columns.concat()
    }

    /// Inverse of [`SkeletonMap::permutation`]: position of each full-body
    /// column inside the concatenated part layout.
    pub fn inverse_permutation(&self) -> Vec<usize> {
        let mut offsets = [0usize; 6];
        for slot in 1..6 {
            offsets[slot] = offsets[slot - 1] + self.columns[slot - 1].len();
        }
        self.inverse
            .iter()
            .map(|&(slot, off)| offsets[slot] + off)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_widths() {
        let skel = SkeletonMap::standard();
        let widths: Vec<usize> = PARTS.iter().map(|&p| skel.columns(p).len()).collect();
        assert_eq!(widths, vec![24, 48, 48, 43, 50, 50]);
        assert_eq!(widths.iter().sum::<usize>(), 263);
    }

    #[test]
    fn extras_account_for_non_multiples_of_twelve() {
        // 12 values per non-root joint; the root contributes its velocity and
        // the 4 root channels, each leg adds 2 contact channels.
        let odd: Vec<Part> = PARTS.into_iter().filter(|p| p.width() % 12 != 0).collect();
        assert_eq!(odd, vec![Part::Torso, Part::LeftLeg, Part::RightLeg]);
        assert_eq!(Part::LeftLeg.width(), 4 * 12 + 2);
        assert_eq!(Part::Torso.width(), 3 * 12 + 3 + 4);
    }

    #[test]
    fn permutation_is_bijective() {
        let skel = SkeletonMap::standard();
        let perm = skel.permutation();
        let inv = skel.inverse_permutation();
        for i in 0..FEATURE_DIM {
            assert_eq!(perm[inv[i]], i);
            assert_eq!(inv[perm[i]], i);
        }
    }

    #[test]
    fn torso_owns_root_dynamics() {
        let skel = SkeletonMap::standard();
        for c in 0..4 {
            assert_eq!(skel.locate(c).0, Part::Torso);
        }
        assert_eq!(skel.locate(layout::velocity(0)).0, Part::Torso);
        assert_eq!(&skel.columns(Part::Torso)[39..], &[0, 1, 2, 3]);
        assert_eq!(&skel.columns(Part::LeftLeg)[48..], &[259, 260]);
        assert_eq!(&skel.columns(Part::RightLeg)[48..], &[261, 262]);
    }

    #[test]
    fn head_column_order() {
        let skel = SkeletonMap::standard();
        let cols = skel.columns(Part::Head);
        assert_eq!(&cols[..6], &[37, 38, 39, 46, 47, 48]);
        assert_eq!(cols[6], layout::rotation(12));
        assert_eq!(cols[18], layout::velocity(12));
    }

    #[test]
    fn rejects_bad_assignment() {
        let mut bad = SkeletonMap::SMPL_ASSIGNMENT;
        bad[15] = Part::Torso;
        assert!(SkeletonMap::from_assignment(bad).is_err());
        let mut swapped = SkeletonMap::SMPL_ASSIGNMENT;
        swapped[10] = Part::RightLeg;
        swapped[11] = Part::LeftLeg;
        assert!(SkeletonMap::from_assignment(swapped).is_err());
    }

    #[test]
    fn part_names_normalize() {
        assert_eq!(Part::from_name("Left Arm"), Some(Part::LeftArm));
        assert_eq!(Part::from_name("right-leg"), Some(Part::RightLeg));
        assert_eq!(Part::from_name("TORSO"), Some(Part::Torso));
        assert_eq!(Part::from_name("tail"), None);
    }
}
