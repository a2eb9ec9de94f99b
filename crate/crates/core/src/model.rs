//! Robot descriptions, observation layouts, and timing/gain configuration.
//!
//! Everything here is an immutable value after construction. Models and
//! layouts derive serde so experiment config files can define new robots.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Which built-in dynamics drive a [`RobotModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotKind {
    /// Cart on a rail with a passive pole; joint 0 is the cart position.
    Cartpole,
    /// Sagittal-plane quadruped: floating torso plus four (hip, knee) legs.
    PlanarQuadruped,
    /// Description only, no built-in dynamics (e.g. the 12-joint A1 layout).
    Kinematic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub name: String,
    pub kind: RobotKind,
    /// Joint names in action order.
    pub joint_names: Vec<String>,
    pub joint_lower: Vec<f64>,
    pub joint_upper: Vec<f64>,
    pub default_pose: Vec<f64>,
    /// Max actuator effort per joint (N·m for revolute joints, N for the cart).
    pub torque_limit: Vec<f64>,
    /// Per-link masses. Quadruped order: torso, then (thigh, shank) per leg.
    pub link_masses: Vec<f64>,
    pub link_lengths: Vec<f64>,
    pub base_standing_height: f64,
    /// Reflected rotor inertia added to each actuated joint (kg·m²).
    #[serde(default)]
    pub armature: f64,
}

impl RobotModel {
    pub fn n_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.link_masses.iter().sum()
    }

    /// Number of legs for legged models, zero otherwise.
    pub fn n_legs(&self) -> usize {
        match self.kind {
            RobotKind::PlanarQuadruped => self.n_joints() / 2,
            RobotKind::Kinematic => self.n_joints() / 3,
            RobotKind::Cartpole => 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n_joints();
        if n == 0 {
            return Err(ConfigError::invalid("robot", "model has no joints"));
        }
        for (field, len) in [
            ("joint_lower", self.joint_lower.len()),
            ("joint_upper", self.joint_upper.len()),
            ("default_pose", self.default_pose.len()),
            ("torque_limit", self.torque_limit.len()),
        ] {
            if len != n {
                return Err(ConfigError::LengthMismatch {
                    what: field.to_string(),
                    expected: n,
                    actual: len,
                });
            }
        }
        if self.link_masses.len() != self.link_lengths.len() {
            return Err(ConfigError::LengthMismatch {
                what: "link_lengths".into(),
                expected: self.link_masses.len(),
                actual: self.link_lengths.len(),
            });
        }
        let expected_links = match self.kind {
            RobotKind::Cartpole => Some(2),
            RobotKind::PlanarQuadruped => {
                if n % 2 != 0 {
                    return Err(ConfigError::invalid(
                        "robot",
                        "planar quadruped needs (hip, knee) joint pairs",
                    ));
                }
                Some(1 + n)
            }
            RobotKind::Kinematic => None,
        };
        if let Some(links) = expected_links {
            if self.link_masses.len() != links {
                return Err(ConfigError::LengthMismatch {
                    what: "link_masses".into(),
                    expected: links,
                    actual: self.link_masses.len(),
                });
            }
        }
        for i in 0..n {
            if !(self.joint_lower[i] < self.joint_upper[i]) {
                return Err(ConfigError::invalid(
                    "robot",
                    format!("joint {} has lower >= upper", self.joint_names[i]),
                ));
            }
            if !(self.torque_limit[i] > 0.0) {
                return Err(ConfigError::invalid(
                    "robot",
                    format!("joint {} torque limit must be positive", self.joint_names[i]),
                ));
            }
        }
        if self.link_masses.iter().any(|m| !(*m > 0.0)) || self.link_lengths.iter().any(|l| *l < 0.0) {
            return Err(ConfigError::invalid("robot", "link masses must be positive"));
        }
        if !(self.base_standing_height > 0.0) {
            return Err(ConfigError::invalid("robot", "base_standing_height must be positive"));
        }
        if self.armature < 0.0 {
            return Err(ConfigError::invalid("robot", "armature must be non-negative"));
        }
        Ok(())
    }

    /// Torso height with every joint at `default_pose` and the lowest foot on
    /// flat ground, by planar forward kinematics.
    pub fn standing_height_fk(&self) -> f64 {
        match self.kind {
            RobotKind::PlanarQuadruped => {
                let mut lowest: f64 = 0.0;
                for leg in 0..self.n_legs() {
                    let hip = self.default_pose[2 * leg];
                    let knee = self.default_pose[2 * leg + 1];
                    let thigh = self.link_lengths[1 + 2 * leg];
                    let shank = self.link_lengths[2 + 2 * leg];
                    let drop = thigh * hip.cos() + shank * (hip + knee).cos();
                    lowest = lowest.max(drop);
                }
                lowest
            }
            RobotKind::Cartpole => self.link_lengths[1],
            RobotKind::Kinematic => self.base_standing_height,
        }
    }
}

const PLANAR_LEG_NAMES: [&str; 4] = ["FL", "FR", "RL", "RR"];

/// Built-in sagittal-plane quadruped: torso plus four legs of (hip, knee).
///
/// Legs FL/FR attach at the front of the torso, RL/RR at the rear; left and
/// right legs share a hip point in the plane. Angles are counter-clockwise
/// in the x–z plane, zero pointing straight down; knee flexion is negative.
pub fn planar_quadruped_model() -> RobotModel {
    let thigh = 0.2;
    let shank = 0.2;
    let standing_height = 0.32;
    // Foot directly below the hip: both links at equal and opposite tilt.
    let half_bend = (standing_height / (thigh + shank) as f64).acos();
    let hip_default = half_bend;
    let knee_default = -2.0 * half_bend;

    let mut joint_names = Vec::with_capacity(8);
    let mut joint_lower = Vec::with_capacity(8);
    let mut joint_upper = Vec::with_capacity(8);
    let mut default_pose = Vec::with_capacity(8);
    for leg in PLANAR_LEG_NAMES {
        joint_names.push(format!("{leg}_hip"));
        joint_lower.push(-1.2);
        joint_upper.push(1.2);
        default_pose.push(hip_default);
        joint_names.push(format!("{leg}_knee"));
        joint_lower.push(-2.4);
        joint_upper.push(-0.3);
        default_pose.push(knee_default);
    }
    let mut link_masses = vec![6.0];
    let mut link_lengths = vec![0.4];
    for _ in PLANAR_LEG_NAMES {
        link_masses.extend([0.3, 0.3]);
        link_lengths.extend([thigh, shank]);
    }
    RobotModel {
        name: "planar_quadruped".into(),
        kind: RobotKind::PlanarQuadruped,
        joint_names,
        joint_lower,
        joint_upper,
        default_pose,
        torque_limit: vec![33.5; 8],
        link_masses,
        link_lengths,
        base_standing_height: standing_height,
        armature: 0.01,
    }
}

/// Cart (1 kg) on a rail with a passive uniform pole (0.1 kg, 1 m).
///
/// `link_lengths[1]` is the pivot-to-centre-of-mass distance of the pole.
pub fn cartpole_model() -> RobotModel {
    RobotModel {
        name: "cartpole".into(),
        kind: RobotKind::Cartpole,
        joint_names: vec!["cart".into()],
        joint_lower: vec![-2.4],
        joint_upper: vec![2.4],
        default_pose: vec![0.0],
        torque_limit: vec![10.0],
        link_masses: vec![1.0, 0.1],
        link_lengths: vec![0.0, 0.5],
        base_standing_height: 0.5,
        armature: 0.0,
    }
}

/// 12-joint A1-compatible description (hip abduction, thigh, calf per leg).
/// No built-in dynamics; used for layouts, prompts and token accounting.
pub fn a1_model() -> RobotModel {
    let mut joint_names = Vec::with_capacity(12);
    let mut joint_lower = Vec::with_capacity(12);
    let mut joint_upper = Vec::with_capacity(12);
    let mut default_pose = Vec::with_capacity(12);
    for leg in PLANAR_LEG_NAMES {
        let abduction = if leg.ends_with('L') { 0.1 } else { -0.1 };
        let thigh = if leg.starts_with('F') { 0.8 } else { 1.0 };
        for (joint, lo, hi, q0) in [
            ("hip", -0.802, 0.802, abduction),
            ("thigh", -1.047, 4.189, thigh),
            ("calf", -2.697, -0.916, -1.5),
        ] {
            joint_names.push(format!("{leg}_{joint}"));
            joint_lower.push(lo);
            joint_upper.push(hi);
            default_pose.push(q0);
        }
    }
    RobotModel {
        name: "a1".into(),
        kind: RobotKind::Kinematic,
        joint_names,
        joint_lower,
        joint_upper,
        default_pose,
        torque_limit: vec![33.5; 12],
        link_masses: vec![4.713, 0.696, 1.013, 0.166, 0.696, 1.013, 0.166, 0.696, 1.013, 0.166, 0.696, 1.013, 0.166],
        link_lengths: vec![0.267, 0.08, 0.2, 0.2, 0.08, 0.2, 0.2, 0.08, 0.2, 0.2, 0.08, 0.2, 0.2],
        base_standing_height: 0.3,
        armature: 0.0,
    }
}

/// Observation segment vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    BaseLinVel,
    BaseAngVel,
    ProjectedGravity,
    JointPos,
    JointVel,
    PrevAction,
    Command,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 7] = [
        SegmentKind::BaseLinVel,
        SegmentKind::BaseAngVel,
        SegmentKind::ProjectedGravity,
        SegmentKind::JointPos,
        SegmentKind::JointVel,
        SegmentKind::PrevAction,
        SegmentKind::Command,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SegmentKind::BaseLinVel => "base_lin_vel",
            SegmentKind::BaseAngVel => "base_ang_vel",
            SegmentKind::ProjectedGravity => "projected_gravity",
            SegmentKind::JointPos => "joint_pos",
            SegmentKind::JointVel => "joint_vel",
            SegmentKind::PrevAction => "prev_action",
            SegmentKind::Command => "command",
        }
    }

    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == name)
            .ok_or_else(|| ConfigError::UnknownSegment(name.to_string()))
    }
}

impl std::fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// One `(lo, hi)` normalization range per dimension.
    pub ranges: Vec<(f64, f64)>,
}

impl Segment {
    pub fn dim(&self) -> usize {
        self.ranges.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationLayout {
    segments: Vec<Segment>,
}

impl ObservationLayout {
    pub fn new(segments: Vec<Segment>) -> Result<Self, ConfigError> {
        let layout = Self { segments };
        layout.validate()?;
        Ok(layout)
    }

    pub fn empty() -> Self {
        Self { segments: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (i, seg) in self.segments.iter().enumerate() {
            if self.segments[..i].iter().any(|s| s.kind == seg.kind) {
                return Err(ConfigError::invalid(
                    "layout",
                    format!("duplicate segment {}", seg.kind),
                ));
            }
            for &(lo, hi) in &seg.ranges {
                if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
                    return Err(ConfigError::invalid(
                        "layout",
                        format!("segment {} has an invalid range ({lo}, {hi})", seg.kind),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_dim(&self) -> usize {
        self.segments.iter().map(Segment::dim).sum()
    }

    /// Flattened per-dimension ranges in layout order.
    pub fn ranges(&self) -> Vec<(f64, f64)> {
        self.segments.iter().flat_map(|s| s.ranges.iter().copied()).collect()
    }

    pub fn has(&self, kind: SegmentKind) -> bool {
        self.segments.iter().any(|s| s.kind == kind)
    }

    /// Keeps only the listed segments, preserving layout order.
    pub fn subset(&self, keep: &[SegmentKind]) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .filter(|s| keep.contains(&s.kind))
                .cloned()
                .collect(),
        }
    }

    /// Human-readable per-dimension labels, e.g. `joint_pos[FL_hip]`.
    pub fn labels(&self, model: &RobotModel) -> Vec<String> {
        let mut out = Vec::with_capacity(self.total_dim());
        for seg in &self.segments {
            for i in 0..seg.dim() {
                let suffix = match seg.kind {
                    SegmentKind::JointPos | SegmentKind::JointVel | SegmentKind::PrevAction => model
                        .joint_names
                        .get(i)
                        .cloned()
                        .unwrap_or_else(|| i.to_string()),
                    SegmentKind::BaseLinVel | SegmentKind::ProjectedGravity => {
                        axis_name(seg.dim(), i).to_string()
                    }
                    SegmentKind::BaseAngVel => match seg.dim() {
                        1 => "pitch".to_string(),
                        _ => ["roll", "pitch", "yaw"].get(i).unwrap_or(&"?").to_string(),
                    },
                    SegmentKind::Command => ["vx", "vy", "yaw_rate"].get(i).unwrap_or(&"?").to_string(),
                };
                out.push(format!("{}[{}]", seg.kind, suffix));
            }
        }
        out
    }
}

fn axis_name(dim: usize, i: usize) -> &'static str {
    match dim {
        2 => ["x", "z"][i.min(1)],
        _ => ["x", "y", "z"].get(i).copied().unwrap_or("?"),
    }
}

pub const JOINT_VEL_RANGE: f64 = 8.0;
pub const LIN_VEL_RANGE: f64 = 2.0;
pub const ANG_VEL_RANGE: f64 = 4.0;
pub const GRAVITY_RANGE: f64 = 1.0;
pub const COMMAND_RANGE: f64 = 1.0;

fn segment_for(kind: SegmentKind, model: &RobotModel, spatial_dim: usize) -> Segment {
    let n = model.n_joints();
    let limits = || model.joint_lower.iter().copied().zip(model.joint_upper.iter().copied()).collect();
    let ranges = match kind {
        SegmentKind::BaseLinVel => vec![(-LIN_VEL_RANGE, LIN_VEL_RANGE); spatial_dim],
        SegmentKind::BaseAngVel => {
            let d = if spatial_dim == 2 { 1 } else { 3 };
            vec![(-ANG_VEL_RANGE, ANG_VEL_RANGE); d]
        }
        SegmentKind::ProjectedGravity => vec![(-GRAVITY_RANGE, GRAVITY_RANGE); spatial_dim],
        SegmentKind::JointPos | SegmentKind::PrevAction => limits(),
        SegmentKind::JointVel => vec![(-JOINT_VEL_RANGE, JOINT_VEL_RANGE); n],
        SegmentKind::Command => vec![(-COMMAND_RANGE, COMMAND_RANGE); 3],
    };
    Segment { kind, ranges }
}

const BASE_SEGMENTS: [SegmentKind; 5] = [
    SegmentKind::BaseLinVel,
    SegmentKind::BaseAngVel,
    SegmentKind::ProjectedGravity,
    SegmentKind::JointPos,
    SegmentKind::JointVel,
];

/// 33-dim A1 observation: base_lin_vel(3) + base_ang_vel(3) +
/// projected_gravity(3) + joint_pos(12) + joint_vel(12). The RL variant
/// appends command(3) and prev_action(12) for 48 dims.
pub fn a1_layout(rl_variant: bool) -> ObservationLayout {
    let model = a1_model();
    let mut segments: Vec<Segment> = BASE_SEGMENTS.iter().map(|&k| segment_for(k, &model, 3)).collect();
    if rl_variant {
        segments.push(segment_for(SegmentKind::Command, &model, 3));
        segments.push(segment_for(SegmentKind::PrevAction, &model, 3));
    }
    ObservationLayout { segments }
}

/// Planar layout for a built-in model: lin vel (2) + ang vel (1) + projected
/// gravity (2) + joint_pos (n) + joint_vel (n). 21 dims for the quadruped.
pub fn planar_layout(model: &RobotModel) -> ObservationLayout {
    ObservationLayout {
        segments: BASE_SEGMENTS.iter().map(|&k| segment_for(k, model, 2)).collect(),
    }
}

/// Default layout for any model: planar for built-in dynamics, A1-style
/// (3-D base quantities) for kinematic descriptions.
pub fn default_layout(model: &RobotModel) -> ObservationLayout {
    let spatial = if model.kind == RobotKind::Kinematic { 3 } else { 2 };
    ObservationLayout {
        segments: BASE_SEGMENTS.iter().map(|&k| segment_for(k, model, spatial)).collect(),
    }
}

/// Builds a layout from segment names with default ranges for `model`.
pub fn layout_from_names(model: &RobotModel, names: &[String]) -> Result<ObservationLayout, ConfigError> {
    let spatial = if model.kind == RobotKind::Kinematic { 3 } else { 2 };
    let mut segments = Vec::with_capacity(names.len());
    for name in names {
        segments.push(segment_for(SegmentKind::parse(name)?, model, spatial));
    }
    ObservationLayout::new(segments)
}

/// Action normalization ranges: the joint limits.
pub fn action_ranges(model: &RobotModel) -> Vec<(f64, f64)> {
    model.joint_lower.iter().copied().zip(model.joint_upper.iter().copied()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub policy_hz: u32,
    pub pd_hz: u32,
    pub physics_substeps_per_pd: u32,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { policy_hz: 10, pd_hz: 200, physics_substeps_per_pd: 5 }
    }
}

impl TimingConfig {
    pub fn new(policy_hz: u32, pd_hz: u32, physics_substeps_per_pd: u32) -> Result<Self, ConfigError> {
        let t = Self { policy_hz, pd_hz, physics_substeps_per_pd };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.policy_hz == 0 || self.pd_hz == 0 || self.physics_substeps_per_pd == 0 {
            return Err(ConfigError::invalid("timing", "rates and substeps must be positive"));
        }
        if self.pd_hz % self.policy_hz != 0 {
            return Err(ConfigError::invalid(
                "timing",
                format!("pd_hz {} is not a multiple of policy_hz {}", self.pd_hz, self.policy_hz),
            ));
        }
        Ok(())
    }

    pub fn pd_ticks_per_policy_step(&self) -> u32 {
        self.pd_hz / self.policy_hz
    }

    pub fn policy_dt(&self) -> f64 {
        1.0 / self.policy_hz as f64
    }

    pub fn pd_dt(&self) -> f64 {
        1.0 / self.pd_hz as f64
    }

    pub fn physics_dt(&self) -> f64 {
        1.0 / (self.pd_hz as f64 * self.physics_substeps_per_pd as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self { kp: 20.0, kd: 0.5 }
    }
}

impl PdGains {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.kp >= 0.0) || !(self.kd >= 0.0) {
            return Err(ConfigError::invalid("gains", "kp and kd must be non-negative"));
        }
        Ok(())
    }
}
