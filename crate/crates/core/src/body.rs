//! Procedural articulated body model with the SMPL parameter layout
//! (10 shape coefficients, 24 joints x 3 axis-angle pose values).
//!
//! The mesh is assembled from elliptical tubes hung on a 24-joint skeleton and
//! skinned rigidly. Every vertex carries an SMPL-style segmentation label, a
//! 24-part DensePose label with surface coordinates, and a grid texture
//! coordinate in texels. Topology never depends on the parameters.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 24;
pub const NUM_BETAS: usize = 10;
pub const NUM_POSE_PARAMS: usize = NUM_JOINTS * 3;

/// Texels per meter of body surface for the grid texture coordinates.
pub const TEXELS_PER_METER: f64 = 400.0;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
    "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
];

pub const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// Neutral rest joints in meters; +x is the body's left, +y up, +z forward.
const REST_JOINTS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.93, 0.0],
    [0.09, 0.86, 0.0],
    [-0.09, 0.86, 0.0],
    [0.0, 1.04, 0.0],
    [0.10, 0.48, 0.0],
    [-0.10, 0.48, 0.0],
    [0.0, 1.17, 0.0],
    [0.10, 0.09, 0.0],
    [-0.10, 0.09, 0.0],
    [0.0, 1.25, 0.0],
    [0.11, 0.03, 0.12],
    [-0.11, 0.03, 0.12],
    [0.0, 1.44, 0.0],
    [0.07, 1.38, 0.0],
    [-0.07, 1.38, 0.0],
    [0.0, 1.53, 0.0],
    [0.18, 1.40, 0.0],
    [-0.18, 1.40, 0.0],
    [0.44, 1.40, 0.0],
    [-0.44, 1.40, 0.0],
    [0.69, 1.40, 0.0],
    [-0.69, 1.40, 0.0],
    [0.78, 1.40, 0.0],
    [-0.78, 1.40, 0.0],
];

/// SMPL-style segmentation labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BodyPart {
    #[serde(rename = "hips")]
    Hips,
    #[serde(rename = "spine")]
    Spine,
    #[serde(rename = "spine1")]
    Spine1,
    #[serde(rename = "spine2")]
    Spine2,
    #[serde(rename = "neck")]
    Neck,
    #[serde(rename = "head")]
    Head,
    #[serde(rename = "leftShoulder")]
    LeftShoulder,
    #[serde(rename = "rightShoulder")]
    RightShoulder,
    #[serde(rename = "leftArm")]
    LeftArm,
    #[serde(rename = "rightArm")]
    RightArm,
    #[serde(rename = "leftForeArm")]
    LeftForeArm,
    #[serde(rename = "rightForeArm")]
    RightForeArm,
    #[serde(rename = "leftHand")]
    LeftHand,
    #[serde(rename = "rightHand")]
    RightHand,
    #[serde(rename = "leftUpLeg")]
    LeftUpLeg,
    #[serde(rename = "rightUpLeg")]
    RightUpLeg,
    #[serde(rename = "leftLeg")]
    LeftLeg,
    #[serde(rename = "rightLeg")]
    RightLeg,
    #[serde(rename = "leftFoot")]
    LeftFoot,
    #[serde(rename = "rightFoot")]
    RightFoot,
}

impl BodyPart {
    pub const ALL: [BodyPart; 20] = [
        BodyPart::Hips,
        BodyPart::Spine,
        BodyPart::Spine1,
        BodyPart::Spine2,
        BodyPart::Neck,
        BodyPart::Head,
        BodyPart::LeftShoulder,
        BodyPart::RightShoulder,
        BodyPart::LeftArm,
        BodyPart::RightArm,
        BodyPart::LeftForeArm,
        BodyPart::RightForeArm,
        BodyPart::LeftHand,
        BodyPart::RightHand,
        BodyPart::LeftUpLeg,
        BodyPart::RightUpLeg,
        BodyPart::LeftLeg,
        BodyPart::RightLeg,
        BodyPart::LeftFoot,
        BodyPart::RightFoot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::Hips => "hips",
            BodyPart::Spine => "spine",
            BodyPart::Spine1 => "spine1",
            BodyPart::Spine2 => "spine2",
            BodyPart::Neck => "neck",
            BodyPart::Head => "head",
            BodyPart::LeftShoulder => "leftShoulder",
            BodyPart::RightShoulder => "rightShoulder",
            BodyPart::LeftArm => "leftArm",
            BodyPart::RightArm => "rightArm",
            BodyPart::LeftForeArm => "leftForeArm",
            BodyPart::RightForeArm => "rightForeArm",
            BodyPart::LeftHand => "leftHand",
            BodyPart::RightHand => "rightHand",
            BodyPart::LeftUpLeg => "leftUpLeg",
            BodyPart::RightUpLeg => "rightUpLeg",
            BodyPart::LeftLeg => "leftLeg",
            BodyPart::RightLeg => "rightLeg",
            BodyPart::LeftFoot => "leftFoot",
            BodyPart::RightFoot => "rightFoot",
        }
    }

    pub fn from_name(name: &str) -> Option<BodyPart> {
        BodyPart::ALL.iter().copied().find(|p| p.name() == name)
    }

    /// Head, hands and lower body; everything the measurement garment drops.
    pub fn is_trimmed(self) -> bool {
        matches!(
            self,
            BodyPart::Head
                | BodyPart::LeftHand
                | BodyPart::RightHand
                | BodyPart::Hips
                | BodyPart::LeftUpLeg
                | BodyPart::RightUpLeg
                | BodyPart::LeftLeg
                | BodyPart::RightLeg
                | BodyPart::LeftFoot
                | BodyPart::RightFoot
        )
    }
}

/// 24-part DensePose indices. 0 is background.
pub mod dp {
    pub const TORSO_BACK: u8 = 1;
    pub const TORSO_FRONT: u8 = 2;
    pub const RIGHT_HAND: u8 = 3;
    pub const LEFT_HAND: u8 = 4;
    pub const LEFT_FOOT: u8 = 5;
    pub const RIGHT_FOOT: u8 = 6;
    pub const UPPER_LEG_RIGHT: [u8; 2] = [7, 9];
    pub const UPPER_LEG_LEFT: [u8; 2] = [8, 10];
    pub const LOWER_LEG_RIGHT: [u8; 2] = [11, 13];
    pub const LOWER_LEG_LEFT: [u8; 2] = [12, 14];
    pub const UPPER_ARM_LEFT: [u8; 2] = [15, 17];
    pub const UPPER_ARM_RIGHT: [u8; 2] = [16, 18];
    pub const LOWER_ARM_LEFT: [u8; 2] = [19, 21];
    pub const LOWER_ARM_RIGHT: [u8; 2] = [20, 22];
    pub const HEAD_RIGHT: u8 = 23;
    pub const HEAD_LEFT: u8 = 24;
    pub const NUM_PARTS: u8 = 24;
}

/// Shape (10) and pose (72) parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmplParams {
    pub betas: Vec<f64>,
    pub thetas: Vec<f64>,
}

impl SmplParams {
    pub fn neutral() -> Self {
        Self {
            betas: vec![0.0; NUM_BETAS],
            thetas: vec![0.0; NUM_POSE_PARAMS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.len() != NUM_BETAS || self.thetas.len() != NUM_POSE_PARAMS {
            return Err(Error::invalid(format!(
                "expected {NUM_BETAS} shape and {NUM_POSE_PARAMS} pose values, got {} and {}",
                self.betas.len(),
                self.thetas.len()
            )));
        }
        if self.betas.iter().chain(&self.thetas).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite body parameters"));
        }
        Ok(())
    }

    pub fn joint_rotation(&self, j: usize) -> [f64; 3] {
        [self.thetas[3 * j], self.thetas[3 * j + 1], self.thetas[3 * j + 2]]
    }

    pub fn set_joint_rotation(&mut self, j: usize, aa: [f64; 3]) {
        self.thetas[3 * j..3 * j + 3].copy_from_slice(&aa);
    }
}

/// Immutable template: topology, labels, and per-vertex construction recipe.
#[derive(Debug)]
pub struct BodyTemplate {
    recipes: Vec<VertexRecipe>,
    pub faces: Vec<[u32; 3]>,
    pub parts: Vec<BodyPart>,
    pub joint: Vec<u8>,
    pub dp_part: Vec<u8>,
    pub dp_uv: Vec<[f32; 2]>,
    pub grid_uv: Vec<[f64; 2]>,
}

/// How to place a vertex given shaped joints.
#[derive(Debug, Clone)]
struct VertexRecipe {
    tube: usize,
    t: f64,
    cos: f64,
    sin: f64,
    /// Extra push along the tube axis (for cap domes), in radii.
    axial: f64,
}

#[derive(Debug, Clone)]
struct TubeSpec {
    start: TubeEnd,
    end: TubeEnd,
    /// Cross-section radii at the two ends: (along e1, along e2).
    radius_start: (f64, f64),
    radius_end: (f64, f64),
    /// Whether the tube runs mostly horizontally (arms) or vertically (torso, legs).
    horizontal: bool,
    arm: bool,
}

#[derive(Debug, Clone, Copy)]
enum TubeEnd {
    Joint(usize),
    /// Joint plus a fixed offset in meters.
    Offset(usize, [f64; 3]),
}

struct TubeLabel {
    part: Box<dyn Fn(f64) -> BodyPart>,
    joint: Box<dyn Fn(f64) -> usize>,
    /// DensePose part given (t, front-facing, left side).
    dp: Box<dyn Fn(f64, bool, bool) -> u8>,
}

const RINGS: usize = 8;
const SEGMENTS: usize = 16;

fn tubes() -> Vec<(TubeSpec, TubeLabel)> {
    use BodyPart::*;
    let mut out: Vec<(TubeSpec, TubeLabel)> = Vec::new();
    let fixed = |p: BodyPart, j: usize, d: u8| TubeLabel {
        part: Box::new(move |_| p),
        joint: Box::new(move |_| j),
        dp: Box::new(move |_, _, _| d),
    };
    let pair = |p: BodyPart, j: usize, d: [u8; 2]| TubeLabel {
        part: Box::new(move |_| p),
        joint: Box::new(move |_| j),
        dp: Box::new(move |_, front, _| if front { d[0] } else { d[1] }),
    };
    let torso_dp = |_: f64, front: bool, _: bool| if front { dp::TORSO_FRONT } else { dp::TORSO_BACK };

    // pelvis, hip line up to the navel
    out.push((
        TubeSpec {
            start: TubeEnd::Offset(0, [0.0, -0.12, 0.0]),
            end: TubeEnd::Joint(3),
            radius_start: (0.16, 0.10),
            radius_end: (0.145, 0.095),
            horizontal: false,
            arm: false,
        },
        TubeLabel {
            part: Box::new(|_| Hips),
            joint: Box::new(|_| 0),
            dp: Box::new(torso_dp),
        },
    ));
    // torso, navel to neck base; skinned to the three spine joints by height
    out.push((
        TubeSpec {
            start: TubeEnd::Joint(3),
            end: TubeEnd::Offset(12, [0.0, -0.02, 0.0]),
            radius_start: (0.145, 0.095),
            radius_end: (0.165, 0.09),
            horizontal: false,
            arm: false,
        },
        TubeLabel {
            part: Box::new(|t| if t < 0.33 { Spine } else if t < 0.55 { Spine1 } else { Spine2 }),
            joint: Box::new(|t| if t < 0.33 { 3 } else if t < 0.55 { 6 } else { 9 }),
            dp: Box::new(torso_dp),
        },
    ));
    // neck: lower half is the retained neck base, upper half belongs to the head
    out.push((
        TubeSpec {
            start: TubeEnd::Offset(12, [0.0, -0.04, 0.0]),
            end: TubeEnd::Joint(15),
            radius_start: (0.06, 0.055),
            radius_end: (0.05, 0.05),
            horizontal: false,
            arm: false,
        },
        TubeLabel {
            part: Box::new(|t| if t <= 0.5 { Neck } else { Head }),
            joint: Box::new(|t| if t <= 0.5 { 12 } else { 15 }),
            dp: Box::new(|_, _, left| if left { dp::HEAD_LEFT } else { dp::HEAD_RIGHT }),
        },
    ));
    // head
    out.push((
        TubeSpec {
            start: TubeEnd::Joint(15),
            end: TubeEnd::Offset(15, [0.0, 0.20, 0.0]),
            radius_start: (0.075, 0.085),
            radius_end: (0.08, 0.085),
            horizontal: false,
            arm: false,
        },
        TubeLabel {
            part: Box::new(|_| Head),
            joint: Box::new(|_| 15),
            dp: Box::new(|_, _, left| if left { dp::HEAD_LEFT } else { dp::HEAD_RIGHT }),
        },
    ));
    for (left, sign) in [(true, 1.0), (false, -1.0)] {
        let l = |a: BodyPart, b: BodyPart| if left { a } else { b };
        let j = |a: usize, b: usize| if left { a } else { b };
        // collar cap joining torso and upper arm
        out.push((
            TubeSpec {
                start: TubeEnd::Offset(j(13, 14), [-sign * 0.02, 0.0, 0.0]),
                end: TubeEnd::Joint(j(16, 17)),
                radius_start: (0.07, 0.075),
                radius_end: (0.06, 0.065),
                horizontal: true,
                arm: true,
            },
            pair(
                l(LeftShoulder, RightShoulder),
                j(13, 14),
                [dp::TORSO_FRONT, dp::TORSO_BACK],
            ),
        ));
        out.push((
            TubeSpec {
                start: TubeEnd::Joint(j(16, 17)),
                end: TubeEnd::Joint(j(18, 19)),
                radius_start: (0.058, 0.06),
                radius_end: (0.045, 0.045),
                horizontal: true,
                arm: true,
            },
            pair(
                l(LeftArm, RightArm),
                j(16, 17),
                if left { dp::UPPER_ARM_LEFT } else { dp::UPPER_ARM_RIGHT },
            ),
        ));
        out.push((
            TubeSpec {
                start: TubeEnd::Joint(j(18, 19)),
                end: TubeEnd::Joint(j(20, 21)),
                radius_start: (0.043, 0.043),
                radius_end: (0.032, 0.035),
                horizontal: true,
                arm: true,
            },
            pair(
                l(LeftForeArm, RightForeArm),
                j(18, 19),
                if left { dp::LOWER_ARM_LEFT } else { dp::LOWER_ARM_RIGHT },
            ),
        ));
        out.push((
            TubeSpec {
                start: TubeEnd::Joint(j(20, 21)),
                end: TubeEnd::Offset(j(22, 23), [sign * 0.04, 0.0, 0.0]),
                radius_start: (0.02, 0.04),
                radius_end: (0.015, 0.035),
                horizontal: true,
                arm: true,
            },
            fixed(
                l(LeftHand, RightHand),
                j(20, 21),
                if left { dp::LEFT_HAND } else { dp::RIGHT_HAND },
            ),
        ));
        out.push((
            TubeSpec {
                start: TubeEnd::Offset(j(1, 2), [0.0, 0.02, 0.0]),
                end: TubeEnd::Joint(j(4, 5)),
                radius_start: (0.08, 0.085),
                radius_end: (0.055, 0.055),
                horizontal: false,
                arm: false,
            },
            pair(
                l(LeftUpLeg, RightUpLeg),
                j(1, 2),
                if left { dp::UPPER_LEG_LEFT } else { dp::UPPER_LEG_RIGHT },
            ),
        ));
        out.push((
            TubeSpec {
                start: TubeEnd::Joint(j(4, 5)),
                end: TubeEnd::Joint(j(7, 8)),
                radius_start: (0.052, 0.055),
                radius_end: (0.035, 0.038),
                horizontal: false,
                arm: false,
            },
            pair(
                l(LeftLeg, RightLeg),
                j(4, 5),
                if left { dp::LOWER_LEG_LEFT } else { dp::LOWER_LEG_RIGHT },
            ),
        ));
        out.push((
            TubeSpec {
                start: TubeEnd::Offset(j(7, 8), [0.0, -0.02, -0.05]),
                end: TubeEnd::Offset(j(10, 11), [0.0, -0.01, 0.05]),
                radius_start: (0.04, 0.035),
                radius_end: (0.04, 0.02),
                horizontal: true,
                arm: false,
            },
            fixed(
                l(LeftFoot, RightFoot),
                j(7, 10),
                if left { dp::LEFT_FOOT } else { dp::RIGHT_FOOT },
            ),
        ));
    }
    out
}

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn norm(a: V3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}
fn normalize(a: V3) -> V3 {
    let n = norm(a);
    scale(a, 1.0 / n)
}
fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

type M3 = [[f64; 3]; 3];

const M3_IDENTITY: M3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &M3, v: V3) -> V3 {
    [dot(a[0], v), dot(a[1], v), dot(a[2], v)]
}

/// Rodrigues' formula for an axis-angle vector.
pub fn axis_angle_to_matrix(aa: [f64; 3]) -> [[f64; 3]; 3] {
    let angle = norm(aa);
    if angle < 1e-12 {
        return M3_IDENTITY;
    }
    let [x, y, z] = scale(aa, 1.0 / angle);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Rest joints after applying shape coefficients. Active coefficients:
/// 0 overall height, 1 girth (applied to radii), 2 shoulder width, 3 arm length.
fn shaped_joints(betas: &[f64]) -> [V3; NUM_JOINTS] {
    let height = 1.0 + 0.05 * betas[0];
    let shoulder = 0.015 * betas[2];
    let arm = 1.0 + 0.04 * betas[3];
    let mut j = REST_JOINTS;
    for (idx, side) in [(13, 1.0), (14, -1.0), (16, 1.0), (17, -1.0)] {
        j[idx][0] += side * shoulder;
    }
    // arm chains: scale bone offsets from the shoulder outward
    for chain in [[16, 18, 20, 22], [17, 19, 21, 23]] {
        let base = REST_JOINTS[chain[0]];
        let moved = j[chain[0]];
        for &k in &chain[1..] {
            let off = sub(REST_JOINTS[k], base);
            j[k] = add(moved, scale(off, arm));
        }
    }
    for p in j.iter_mut() {
        *p = scale(*p, height);
    }
    j
}

impl BodyTemplate {
    fn build() -> Self {
        let specs = tubes();
        let mut t = BodyTemplate {
            recipes: Vec::new(),
            faces: Vec::new(),
            parts: Vec::new(),
            joint: Vec::new(),
            dp_part: Vec::new(),
            dp_uv: Vec::new(),
            grid_uv: Vec::new(),
        };
        // grid coordinates are laid out on the neutral body so they stay fixed
        let joints = shaped_joints(&[0.0; NUM_BETAS]);
        for (tube_idx, (spec, label)) in specs.iter().enumerate() {
            let (a, b) = (end_pos(&joints, spec.start), end_pos(&joints, spec.end));
            let length = norm(sub(b, a));
            let base = t.recipes.len() as u32;
            let left_side = (a[0] + b[0]) / 2.0 >= 0.0;
            let midline = a[0].abs() < 1e-9 && b[0].abs() < 1e-9;
            let front_axis = frame(spec, a, b);
            for r in 0..=RINGS {
                let tt = r as f64 / RINGS as f64;
                let (r1, r2) = lerp_radius(spec, tt);
                let circumference = PI * (r1 + r2);
                for s in 0..=SEGMENTS {
                    let phi = 2.0 * PI * s as f64 / SEGMENTS as f64;
                    let (sin, cos) = phi.sin_cos();
                    let offset = add(scale(front_axis.0, cos * r1), scale(front_axis.1, sin * r2));
                    let front = offset[2] >= -1e-9;
                    let left = if midline { a[0] + offset[0] >= 0.0 } else { left_side };
                    t.recipes.push(VertexRecipe {
                        tube: tube_idx,
                        t: tt,
                        cos,
                        sin,
                        axial: 0.0,
                    });
                    t.parts.push((label.part)(tt));
                    t.joint.push((label.joint)(tt) as u8);
                    t.dp_part.push((label.dp)(tt, front, left));
                    t.dp_uv.push([(s as f64 / SEGMENTS as f64) as f32, tt as f32]);
                    t.grid_uv.push([
                        s as f64 / SEGMENTS as f64 * circumference * TEXELS_PER_METER,
                        tt * length * TEXELS_PER_METER,
                    ]);
                }
            }
            let stride = (SEGMENTS + 1) as u32;
            for r in 0..RINGS as u32 {
                for s in 0..SEGMENTS as u32 {
                    let i0 = base + r * stride + s;
                    let i1 = i0 + 1;
                    let i2 = i0 + stride;
                    let i3 = i2 + 1;
                    t.faces.push([i0, i2, i1]);
                    t.faces.push([i1, i2, i3]);
                }
            }
            // dome caps
            for (ring, tt, axial) in [(0u32, 0.0, -0.6), (RINGS as u32, 1.0, 0.6)] {
                let center = t.recipes.len() as u32;
                t.recipes.push(VertexRecipe {
                    tube: tube_idx,
                    t: tt,
                    cos: 0.0,
                    sin: 0.0,
                    axial,
                });
                t.parts.push((label.part)(tt));
                t.joint.push((label.joint)(tt) as u8);
                t.dp_part.push((label.dp)(tt, true, left_side));
                t.dp_uv.push([0.5, tt as f32]);
                t.grid_uv.push([0.0, tt * length * TEXELS_PER_METER]);
                for s in 0..SEGMENTS as u32 {
                    let a0 = base + ring * stride + s;
                    t.faces.push([center, a0, a0 + 1]);
                }
            }
        }
        t
    }

    pub fn vertex_count(&self) -> usize {
        self.recipes.len()
    }

    /// Rest-pose vertices for the given shape.
    pub fn shaped_vertices(&self, betas: &[f64]) -> Vec<V3> {
        let joints = shaped_joints(betas);
        let girth = 1.0 + 0.08 * betas[1];
        let specs = tubes();
        let geo: Vec<_> = specs
            .iter()
            .map(|(spec, _)| {
                let a = end_pos(&joints, spec.start);
                let b = end_pos(&joints, spec.end);
                (spec.clone(), a, b, frame(spec, a, b))
            })
            .collect();
        self.recipes
            .iter()
            .map(|r| {
                let (spec, a, b, (e1, e2)) = &geo[r.tube];
                let (r1, r2) = lerp_radius(spec, r.t);
                let (r1, r2) = (r1 * girth, r2 * girth);
                let axis = sub(*b, *a);
                let dir = normalize(axis);
                let center = add(*a, scale(axis, r.t));
                let mut p = add(center, add(scale(*e1, r.cos * r1), scale(*e2, r.sin * r2)));
                if r.axial != 0.0 {
                    p = add(p, scale(dir, r.axial * r1.min(r2)));
                }
                p
            })
            .collect()
    }

    /// Posed vertices via rigid forward kinematics.
    pub fn posed_vertices(&self, params: &SmplParams) -> Result<Vec<V3>> {
        params.validate()?;
        let joints = shaped_joints(&params.betas);
        let rest = self.shaped_vertices(&params.betas);
        let mut rot = [M3_IDENTITY; NUM_JOINTS];
        let mut trans = [[0.0; 3]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let local = axis_angle_to_matrix(params.joint_rotation(j));
            match PARENTS[j] {
                None => {
                    rot[j] = local;
                    trans[j] = joints[j];
                }
                Some(p) => {
                    rot[j] = mat_mul(&rot[p], &local);
                    trans[j] = add(mat_vec(&rot[p], sub(joints[j], joints[p])), trans[p]);
                }
            }
        }
        Ok(rest
            .iter()
            .zip(&self.joint)
            .map(|(v, &j)| {
                let j = j as usize;
                add(mat_vec(&rot[j], sub(*v, joints[j])), trans[j])
            })
            .collect())
    }

    pub fn label_table(&self) -> PartLabelTable {
        PartLabelTable::from_labels(MODEL_NAME, &self.parts)
    }
}

fn end_pos(joints: &[V3; NUM_JOINTS], end: TubeEnd) -> V3 {
    match end {
        TubeEnd::Joint(j) => joints[j],
        TubeEnd::Offset(j, off) => add(joints[j], off),
    }
}

fn lerp_radius(spec: &TubeSpec, t: f64) -> (f64, f64) {
    (
        spec.radius_start.0 + (spec.radius_end.0 - spec.radius_start.0) * t,
        spec.radius_start.1 + (spec.radius_end.1 - spec.radius_start.1) * t,
    )
}

/// Cross-section basis: e1 is the "width" direction, e2 points forward where possible.
fn frame(spec: &TubeSpec, a: V3, b: V3) -> (V3, V3) {
    let d = normalize(sub(b, a));
    let reference = if spec.horizontal {
        if spec.arm {
            [0.0, 1.0, 0.0]
        } else {
            [1.0, 0.0, 0.0]
        }
    } else {
        [1.0, 0.0, 0.0]
    };
    let e1 = normalize(sub(reference, scale(d, dot(reference, d))));
    let e2 = cross(d, e1);
    // keep e2 pointing toward +z (front) or +y for feet
    if spec.horizontal && !spec.arm {
        let e2 = if e2[1] < 0.0 { scale(e2, -1.0) } else { e2 };
        (e1, e2)
    } else if e2[2] < 0.0 {
        (e1, scale(e2, -1.0))
    } else {
        (e1, e2)
    }
}

pub const MODEL_NAME: &str = "tryon-procedural-body-v1";

pub fn template() -> &'static BodyTemplate {
    static T: OnceLock<BodyTemplate> = OnceLock::new();
    T.get_or_init(BodyTemplate::build)
}

/// Per-vertex segmentation table in its on-disk form: contiguous index ranges per
/// part name plus a checksum over the expanded label list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartLabelTable {
    pub version: u32,
    pub model: String,
    pub vertex_count: usize,
    /// `(part name, first vertex, one past last vertex)` in vertex order.
    pub ranges: Vec<(String, usize, usize)>,
    pub checksum: String,
}

const BUNDLED_TABLE: &str = include_str!("../data/body_part_labels.json");

impl PartLabelTable {
    pub fn from_labels(model: &str, labels: &[BodyPart]) -> Self {
        let mut ranges: Vec<(String, usize, usize)> = Vec::new();
        for (i, p) in labels.iter().enumerate() {
            match ranges.last_mut() {
                Some((name, _, end)) if name == p.name() && *end == i => *end = i + 1,
                _ => ranges.push((p.name().to_string(), i, i + 1)),
            }
        }
        Self {
            version: 1,
            model: model.to_string(),
            vertex_count: labels.len(),
            ranges,
            checksum: label_checksum(labels),
        }
    }

    pub fn bundled() -> Result<Self> {
        let table: PartLabelTable =
            serde_json::from_str(BUNDLED_TABLE).map_err(|e| Error::json("bundled part label table", e))?;
        table.labels()?;
        Ok(table)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: PartLabelTable = serde_json::from_str(text).map_err(|e| Error::json("part label table", e))?;
        table.labels()?;
        Ok(table)
    }

    /// Expand ranges into per-vertex labels, verifying coverage and checksum.
    pub fn labels(&self) -> Result<Vec<BodyPart>> {
        let mut out = Vec::with_capacity(self.vertex_count);
        for (name, start, end) in &self.ranges {
            if *start != out.len() || end < start {
                return Err(Error::invalid(format!("part label ranges not contiguous at {name}")));
            }
            let p = BodyPart::from_name(name).ok_or_else(|| Error::invalid(format!("unknown body part {name}")))?;
            out.extend(std::iter::repeat_n(p, end - start));
        }
        if out.len() != self.vertex_count {
            return Err(Error::invalid(format!(
                "part label table covers {} vertices, header says {}",
                out.len(),
                self.vertex_count
            )));
        }
        let sum = label_checksum(&out);
        if sum != self.checksum {
            return Err(Error::invalid(format!(
                "part label checksum mismatch: table {}, computed {sum}",
                self.checksum
            )));
        }
        Ok(out)
    }
}

fn label_checksum(labels: &[BodyPart]) -> String {
    let mut h = Sha256::new();
    for (i, p) in labels.iter().enumerate() {
        h.update(format!("{i}:{}\n", p.name()).as_bytes());
    }
    hex::encode(h.finalize())
}
