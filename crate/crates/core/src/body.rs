//! Procedural articulated characters built from labeled capsules, and
//! posture sampling.
//!
//! The skeleton, joint limits and body-part partition are plain-text tables
//! shipped in `data/`; see the header of each file for its schema.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::rotation_from_vector;
use crate::seed::{derive_seed, rng_from};
use crate::stage::Stage;

pub const SKELETON_TABLE: &str = include_str!("../data/skeleton.txt");
pub const JOINT_LIMITS_TABLE: &str = include_str!("../data/joint_limits.txt");
pub const PARTS_TABLE: &str = include_str!("../data/parts.txt");

const TABLE_VERSION: u32 = 1;

/// Default number of body-part labels (background excluded).
pub const DEFAULT_PART_COUNT: usize = 43;

pub const MIN_RADIUS: f64 = 0.02;
pub const MAX_RADIUS: f64 = 0.25;

/// Number of characters in the hard-stage pool.
pub const HARD_POOL_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LimbGroup {
    Torso,
    Head,
    Arm,
    Leg,
}

impl LimbGroup {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "torso" => Some(Self::Torso),
            "head" => Some(Self::Head),
            "arm" => Some(Self::Arm),
            "leg" => Some(Self::Leg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub group: LimbGroup,
    pub rest_offset: Vector3<f64>,
}

/// Joints in topological order; joint 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        if joints[0].parent.is_some() {
            return Err(Error::InvalidSkeleton("joint 0 must be the root".into()));
        }
        for (i, j) in joints.iter().enumerate().skip(1) {
            match j.parent {
                None => return Err(Error::InvalidSkeleton(format!("joint {} has no parent", j.name))),
                Some(p) if p >= i => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {} has parent index {p} not preceding it",
                        j.name
                    )))
                }
                _ => {}
            }
            if j.rest_offset.norm() == 0.0 {
                return Err(Error::InvalidSkeleton(format!("joint {} has a zero rest offset", j.name)));
            }
        }
        Ok(Self { joints })
    }

    pub fn builtin() -> Self {
        Self::parse(SKELETON_TABLE).expect("builtin skeleton table is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let rows = table_rows("skeleton", text, 6)?;
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut joints = Vec::with_capacity(rows.len());
        for (line, cols) in rows {
            let err = |reason: String| Error::Table {
                table: "skeleton",
                line,
                reason,
            };
            let parent = match cols[1] {
                "-" => None,
                name => Some(*index.get(name).ok_or_else(|| err(format!("unknown parent {name}")))?),
            };
            let group = LimbGroup::parse(cols[2]).ok_or_else(|| err(format!("unknown group {}", cols[2])))?;
            let rest_offset = parse_vec3(&cols[3..6]).map_err(err)?;
            index.insert(cols[0].to_string(), joints.len());
            joints.push(Joint {
                name: cols[0].to_string(),
                parent,
                group,
                rest_offset,
            });
        }
        Self::new(joints)
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.joints.iter().map(|j| j.name.as_str()).collect()
    }
}

/// Per-joint box bounds on the local rotation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    names: Vec<String>,
    ranges: Vec<[(f64, f64); 3]>,
}

impl JointLimits {
    pub fn builtin() -> Self {
        Self::parse(JOINT_LIMITS_TABLE).expect("builtin joint-limit table is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let rows = table_rows("joint_limits", text, 7)?;
        let mut names = Vec::with_capacity(rows.len());
        let mut ranges = Vec::with_capacity(rows.len());
        for (line, cols) in rows {
            let mut r = [(0.0, 0.0); 3];
            for (axis, range) in r.iter_mut().enumerate() {
                let lo = parse_f64(cols[1 + 2 * axis]);
                let hi = parse_f64(cols[2 + 2 * axis]);
                match (lo, hi) {
                    (Some(lo), Some(hi)) if lo <= hi => *range = (lo, hi),
                    _ => {
                        return Err(Error::Table {
                            table: "joint_limits",
                            line,
                            reason: format!("bad range on axis {axis}"),
                        })
                    }
                }
            }
            names.push(cols[0].to_string());
            ranges.push(r);
        }
        Ok(Self { names, ranges })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn range(&self, joint: usize, axis: usize) -> (f64, f64) {
        self.ranges[joint][axis]
    }

    pub fn contains(&self, posture: &Posture) -> bool {
        posture.rotations.len() == self.ranges.len()
            && posture.rotations.iter().zip(&self.ranges).all(|(v, r)| {
                (0..3).all(|a| v[a] >= r[a].0 - 1e-12 && v[a] <= r[a].1 + 1e-12)
            })
    }

    fn clamp(&self, joint: usize, v: &mut Vector3<f64>) {
        for a in 0..3 {
            let (lo, hi) = self.ranges[joint][a];
            v[a] = v[a].clamp(lo, hi);
        }
    }

    pub fn check_matches(&self, skeleton: &Skeleton) -> Result<()> {
        if self.names.len() != skeleton.len() || self.names.iter().zip(skeleton.joints()).any(|(n, j)| *n != j.name) {
            return Err(Error::InvalidSkeleton("joint-limit table does not match skeleton".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Center,
}

/// A labeled capsule riding on the bone that ends at joint `bone`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartCapsule {
    pub label: u8,
    pub name: String,
    pub side: Side,
    pub bone: usize,
    /// Axial extent as fractions of the bone's rest offset.
    pub from: f64,
    pub to: f64,
    pub radius: f64,
    pub offset: Vector3<f64>,
}

pub fn parse_parts(text: &str, skeleton: &Skeleton) -> Result<Vec<PartCapsule>> {
    let rows = table_rows("parts", text, 10)?;
    let mut parts = Vec::with_capacity(rows.len());
    for (line, cols) in rows {
        let err = |reason: String| Error::Table {
            table: "parts",
            line,
            reason,
        };
        let label: u8 = cols[0].parse().map_err(|_| err(format!("bad label {}", cols[0])))?;
        let side = match cols[2] {
            "l" => Side::Left,
            "r" => Side::Right,
            "c" => Side::Center,
            s => return Err(err(format!("bad side {s}"))),
        };
        let bone = skeleton
            .index_of(cols[3])
            .ok_or_else(|| err(format!("unknown bone {}", cols[3])))?;
        let from = parse_f64(cols[4]).ok_or_else(|| err("bad from".into()))?;
        let to = parse_f64(cols[5]).ok_or_else(|| err("bad to".into()))?;
        let radius = parse_f64(cols[6]).ok_or_else(|| err("bad radius".into()))?;
        let offset = parse_vec3(&cols[7..10]).map_err(err)?;
        parts.push(PartCapsule {
            label,
            name: cols[1].to_string(),
            side,
            bone,
            from,
            to,
            radius,
            offset,
        });
    }
    Ok(parts)
}

/// Per-limb-group length multipliers plus a girth multiplier on radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeScale {
    pub torso: f64,
    pub head: f64,
    pub arm: f64,
    pub leg: f64,
    pub girth: f64,
}

impl Default for ShapeScale {
    fn default() -> Self {
        Self {
            torso: 1.0,
            head: 1.0,
            arm: 1.0,
            leg: 1.0,
            girth: 1.0,
        }
    }
}

impl ShapeScale {
    pub fn length(&self, group: LimbGroup) -> f64 {
        match group {
            LimbGroup::Torso => self.torso,
            LimbGroup::Head => self.head,
            LimbGroup::Arm => self.arm,
            LimbGroup::Leg => self.leg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Character {
    pub id: u16,
    pub skeleton: Skeleton,
    pub parts: Vec<PartCapsule>,
    pub shape: ShapeScale,
    /// Radius inflation applied to depth rendering only.
    pub clothing_factor: f64,
    pub n_labels: usize,
}

impl Character {
    pub fn new(
        id: u16,
        skeleton: Skeleton,
        parts: Vec<PartCapsule>,
        shape: ShapeScale,
        clothing_factor: f64,
        n_labels: usize,
    ) -> Result<Self> {
        let c = Self {
            id,
            skeleton,
            parts,
            shape,
            clothing_factor,
            n_labels,
        };
        c.validate()?;
        Ok(c)
    }

    /// The canonical character used by the easy and inter stages.
    pub fn canonical() -> Self {
        let skeleton = Skeleton::builtin();
        let parts = parse_parts(PARTS_TABLE, &skeleton).expect("builtin part table is valid");
        Self::new(0, skeleton, parts, ShapeScale::default(), 1.05, DEFAULT_PART_COUNT)
            .expect("canonical character is valid")
    }

    fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidCharacter(s));
        if !(1.0..=1.1).contains(&self.clothing_factor) {
            return bad(format!("clothing factor {} outside [1.0, 1.1]", self.clothing_factor));
        }
        let mut labels = BTreeSet::new();
        let mut sides: HashMap<u8, Side> = HashMap::new();
        for p in &self.parts {
            if p.label == 0 || p.label as usize > self.n_labels {
                return bad(format!("part {} has label {} outside 1..{}", p.name, p.label, self.n_labels));
            }
            if p.bone == 0 || p.bone >= self.skeleton.len() {
                return bad(format!("part {} rides on invalid bone {}", p.name, p.bone));
            }
            let r = self.scaled_radius(p);
            if !(MIN_RADIUS..=MAX_RADIUS).contains(&r) {
                return bad(format!("part {} radius {r} outside [{MIN_RADIUS}, {MAX_RADIUS}]", p.name));
            }
            if let Some(prev) = sides.insert(p.label, p.side) {
                if prev != p.side {
                    return bad(format!("label {} used on two sides", p.label));
                }
            }
            labels.insert(p.label);
        }
        if labels.len() != self.n_labels {
            return bad(format!("{} of {} labels have capsules", labels.len(), self.n_labels));
        }
        let left = sides.values().filter(|s| **s == Side::Left).count();
        let right = sides.values().filter(|s| **s == Side::Right).count();
        if left != right {
            return bad(format!("{left} left labels vs {right} right labels"));
        }
        Ok(())
    }

    pub fn scaled_radius(&self, part: &PartCapsule) -> f64 {
        (part.radius * self.shape.girth).clamp(MIN_RADIUS, MAX_RADIUS)
    }

    pub fn labels_on(&self, side: Side) -> BTreeSet<u8> {
        self.parts.iter().filter(|p| p.side == side).map(|p| p.label).collect()
    }
}

/// Character pool for a curriculum stage: one canonical character for the
/// easy and inter stages, sixteen shape-varied characters for hard.
pub fn build_character_pool(stage: Stage, seed: u64) -> Vec<Character> {
    match stage {
        Stage::Easy | Stage::Inter => vec![Character::canonical()],
        Stage::Hard => {
            let base = Character::canonical();
            (0..HARD_POOL_SIZE)
                .map(|i| {
                    let mut rng = rng_from(derive_seed(seed, &[0xc4a2, i as u64]));
                    let mut draw = || rng.random_range(0.85..=1.20);
                    let shape = ShapeScale {
                        torso: draw(),
                        head: draw(),
                        arm: draw(),
                        leg: draw(),
                        girth: draw(),
                    };
                    let clothing = rng.random_range(1.0..=1.1);
                    Character::new(
                        i as u16,
                        base.skeleton.clone(),
                        base.parts.clone(),
                        shape,
                        clothing,
                        base.n_labels,
                    )
                    .expect("scaled character stays valid")
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PostureTag {
    WalkRun,
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posture {
    pub id: u32,
    pub tag: PostureTag,
    /// Local rotation vector per joint.
    pub rotations: Vec<Vector3<f64>>,
}

impl Posture {
    pub fn identity(n_joints: usize) -> Self {
        Self {
            id: 0,
            tag: PostureTag::General,
            rotations: vec![Vector3::zeros(); n_joints],
        }
    }
}

/// Joint positions and cumulative rotations.
pub fn forward_frames(
    skeleton: &Skeleton,
    posture: &Posture,
    shape: &ShapeScale,
) -> Result<(Vec<Vector3<f64>>, Vec<Matrix3<f64>>)> {
    if posture.rotations.len() != skeleton.len() {
        return Err(Error::JointCountMismatch {
            skeleton: skeleton.len(),
            posture: posture.rotations.len(),
        });
    }
    let n = skeleton.len();
    let mut positions = Vec::with_capacity(n);
    let mut frames: Vec<Matrix3<f64>> = Vec::with_capacity(n);
    for (i, joint) in skeleton.joints().iter().enumerate() {
        let local = rotation_from_vector(posture.rotations[i]);
        match joint.parent {
            None => {
                positions.push(Vector3::zeros());
                frames.push(local);
            }
            Some(p) => {
                let offset = joint.rest_offset * shape.length(joint.group);
                positions.push(positions[p] + frames[p] * offset);
                frames.push(frames[p] * local);
            }
        }
    }
    Ok((positions, frames))
}

/// Joint positions in the character frame (root at the origin).
pub fn forward_kinematics(skeleton: &Skeleton, posture: &Posture, shape: &ShapeScale) -> Result<Vec<Vector3<f64>>> {
    forward_frames(skeleton, posture, shape).map(|(p, _)| p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosedCapsule {
    pub label: u8,
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosedGeometry {
    pub capsules: Vec<PosedCapsule>,
    pub joint_positions: Vec<Vector3<f64>>,
}

impl PosedGeometry {
    pub fn joint_centroid(&self) -> Vector3<f64> {
        let n = self.joint_positions.len().max(1) as f64;
        self.joint_positions.iter().sum::<Vector3<f64>>() / n
    }

    pub fn labels(&self) -> BTreeSet<u8> {
        self.capsules.iter().map(|c| c.label).collect()
    }
}

pub fn pose_character(character: &Character, posture: &Posture) -> Result<PosedGeometry> {
    let skeleton = &character.skeleton;
    let (positions, frames) = forward_frames(skeleton, posture, &character.shape)?;
    let capsules = character
        .parts
        .iter()
        .map(|part| {
            let joint = &skeleton.joints()[part.bone];
            let parent = joint.parent.expect("parts never ride on the root");
            let bone = joint.rest_offset * character.shape.length(joint.group);
            let offset = part.offset * character.shape.girth;
            let at = |f: f64| positions[parent] + frames[parent] * (bone * f + offset);
            PosedCapsule {
                label: part.label,
                a: at(part.from),
                b: at(part.to),
                radius: character.scaled_radius(part),
            }
        })
        .collect();
    Ok(PosedGeometry {
        capsules,
        joint_positions: positions,
    })
}

/// What `sample_posture` draws from.
#[derive(Debug, Clone, Copy)]
pub struct PostureSpec<'a> {
    pub tag: PostureTag,
    pub limits: &'a JointLimits,
}

const GAIT_NOISE: f64 = 0.03;

/// Draws a posture deterministically from `seed`. Walk/run postures follow a
/// parametric gait cycle with small noise; general postures draw every
/// rotation component uniformly within its limits.
pub fn sample_posture(spec: &PostureSpec<'_>, seed: u64) -> Posture {
    let mut rng = rng_from(seed);
    let limits = spec.limits;
    let mut rotations = vec![Vector3::zeros(); limits.len()];
    match spec.tag {
        PostureTag::General => {
            for (j, rot) in rotations.iter_mut().enumerate() {
                for a in 0..3 {
                    let (lo, hi) = limits.range(j, a);
                    rot[a] = if hi > lo { rng.random_range(lo..hi) } else { lo };
                }
            }
        }
        PostureTag::WalkRun => {
            let phase = rng.random_range(0.0..2.0 * PI);
            let amplitude = rng.random_range(0.3..1.0);
            gait(limits, phase, amplitude, &mut rotations);
            let noise = Normal::new(0.0, GAIT_NOISE).expect("valid sigma");
            for (j, rot) in rotations.iter_mut().enumerate() {
                for a in 0..3 {
                    let (lo, hi) = limits.range(j, a);
                    if hi > lo {
                        rot[a] += noise.sample(&mut rng);
                    }
                }
                limits.clamp(j, rot);
            }
        }
    }
    Posture {
        id: 0,
        tag: spec.tag,
        rotations,
    }
}

/// Noise-free gait cycle at `phase` (radians) and `amplitude` in `[0, 1]`
/// (walk to run), clamped to the limits.
pub fn gait_posture(limits: &JointLimits, phase: f64, amplitude: f64) -> Posture {
    let mut rotations = vec![Vector3::zeros(); limits.len()];
    gait(limits, phase, amplitude, &mut rotations);
    for (j, rot) in rotations.iter_mut().enumerate() {
        limits.clamp(j, rot);
    }
    Posture {
        id: 0,
        tag: PostureTag::WalkRun,
        rotations,
    }
}

fn gait(limits: &JointLimits, phase: f64, amplitude: f64, rotations: &mut [Vector3<f64>]) {
    let idx = |name: &str| limits.names().iter().position(|n| n == name);
    let mut set = |name: &str, axis: usize, value: f64| {
        if let Some(j) = idx(name) {
            rotations[j][axis] = value;
        }
    };
    let a = amplitude;
    for (side, offset, sign) in [("l", 0.0, 1.0), ("r", PI, -1.0)] {
        let p = phase + offset;
        set(&format!("hip_{side}"), 0, 0.05 + 0.55 * a * p.sin());
        set(&format!("knee_{side}"), 0, -0.05 - 1.0 * a * (0.5 + 0.5 * (p + 1.2).sin()));
        set(&format!("ankle_{side}"), 0, 0.2 * a * (p + 0.5).sin());
        set(&format!("shoulder_{side}"), 0, -0.45 * a * p.sin());
        set(&format!("shoulder_{side}"), 1, -sign * 0.12);
        set(&format!("elbow_{side}"), 0, 0.25 + 0.9 * a);
    }
    set("spine", 0, -0.12 * a);
    set("chest", 2, 0.15 * a * phase.sin());
    set("root", 2, 0.08 * a * phase.sin());
}

/// Swaps left and right joints and reflects every rotation through the
/// sagittal plane (x negated).
pub fn mirror_posture(skeleton: &Skeleton, posture: &Posture) -> Posture {
    let mut rotations = posture.rotations.clone();
    for (i, joint) in skeleton.joints().iter().enumerate() {
        let twin = mirror_name(&joint.name)
            .and_then(|n| skeleton.index_of(&n))
            .unwrap_or(i);
        let v = posture.rotations[twin];
        rotations[i] = Vector3::new(v.x, -v.y, -v.z);
    }
    Posture {
        id: posture.id,
        tag: posture.tag,
        rotations,
    }
}

pub fn mirror_name(name: &str) -> Option<String> {
    if let Some(stem) = name.strip_suffix("_l") {
        Some(format!("{stem}_r"))
    } else {
        name.strip_suffix("_r").map(|stem| format!("{stem}_l"))
    }
}

/// The posture pool: ids below `walk_run_count` are walk/run postures, the
/// next `general_count` ids are general postures. Posture `id` is a pure
/// function of `(seed, id)`.
#[derive(Debug, Clone)]
pub struct PosturePool {
    pub limits: JointLimits,
    pub walk_run_count: u32,
    pub general_count: u32,
    pub seed: u64,
}

impl PosturePool {
    pub const DEFAULT_WALK_RUN: u32 = 10_000;
    pub const DEFAULT_GENERAL: u32 = 90_000;

    pub fn new(seed: u64) -> Self {
        Self {
            limits: JointLimits::builtin(),
            walk_run_count: Self::DEFAULT_WALK_RUN,
            general_count: Self::DEFAULT_GENERAL,
            seed,
        }
    }

    pub fn len(&self) -> u32 {
        self.walk_run_count + self.general_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tag_of(&self, id: u32) -> PostureTag {
        if id < self.walk_run_count {
            PostureTag::WalkRun
        } else {
            PostureTag::General
        }
    }

    /// Range of posture ids a stage draws from.
    pub fn id_range(&self, stage: Stage) -> std::ops::Range<u32> {
        match stage {
            Stage::Easy => 0..self.walk_run_count,
            Stage::Inter | Stage::Hard => 0..self.len(),
        }
    }

    pub fn get(&self, id: u32) -> Posture {
        let spec = PostureSpec {
            tag: self.tag_of(id),
            limits: &self.limits,
        };
        let mut p = sample_posture(&spec, derive_seed(self.seed, &[0x9057, id as u64]));
        p.id = id;
        p
    }
}

fn table_rows<'a>(table: &'static str, text: &'a str, columns: usize) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut rows = Vec::new();
    let mut version = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols[0] == "version" {
            version = cols.get(1).and_then(|v| v.parse::<u32>().ok());
            continue;
        }
        if cols.len() != columns {
            return Err(Error::Table {
                table,
                line: i + 1,
                reason: format!("expected {columns} columns, found {}", cols.len()),
            });
        }
        rows.push((i + 1, cols));
    }
    match version {
        Some(TABLE_VERSION) => Ok(rows),
        v => Err(Error::Table {
            table,
            line: 0,
            reason: format!("unsupported table version {v:?}"),
        }),
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_vec3(cols: &[&str]) -> std::result::Result<Vector3<f64>, String> {
    let v: Option<Vec<f64>> = cols.iter().map(|c| parse_f64(c)).collect();
    match v {
        Some(v) if v.len() == 3 => Ok(Vector3::new(v[0], v[1], v[2])),
        _ => Err(format!("bad vector {cols:?}")),
    }
}
