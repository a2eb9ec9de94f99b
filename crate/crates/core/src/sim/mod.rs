//! Built-in physics and the inner PD control loop.
//!
//! A [`World`] bundles a robot model with terrain and contact parameters.
//! Stepping is a pure function of its inputs: the previous state is never
//! mutated and identical inputs give bit-identical results.

mod cartpole;
pub mod contact;
mod quadruped;
pub mod terrain;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ConfigError;
use crate::model::{ObservationLayout, PdGains, RobotKind, RobotModel, SegmentKind, TimingConfig};

pub use contact::{ContactForce, ContactParams};
pub use terrain::{Terrain, TerrainConfig};

use cartpole::CartpoleParams;
use quadruped::Quadruped;

pub const GRAVITY: f64 = 9.81;
/// Joints are hard-clamped this far (rad or m) beyond their soft limits.
pub const HARD_LIMIT_MARGIN: f64 = 0.5;
const MAX_SPEED: f64 = 1e3;

/// Numeric observation vector in layout order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

/// Per-joint target positions (rad, or m for the cart).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub Vec<f64>);

impl Observation {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl Action {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Base (x, z) in metres. For the cartpole this is the pole centre of mass.
    pub base_pos: [f64; 2],
    /// Counter-clockwise base pitch (rad). Pole angle for the cartpole.
    pub base_pitch: f64,
    pub base_lin_vel: [f64; 2],
    pub base_ang_vel: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub foot_contacts: Vec<bool>,
    /// Tangential stick anchors, one per contact point.
    pub contact_anchors: Vec<Option<f64>>,
    /// Most recent action target, used by the `prev_action` segment.
    pub last_action: Vec<f64>,
    pub sim_time: f64,
}

impl SimState {
    pub fn is_finite(&self) -> bool {
        self.base_pos.iter().chain(&self.base_lin_vel).all(|v| v.is_finite())
            && self.base_pitch.is_finite()
            && self.base_ang_vel.is_finite()
            && self.q.iter().chain(&self.qd).all(|v| v.is_finite())
            && self.sim_time.is_finite()
    }

    fn max_speed(&self) -> f64 {
        self.base_lin_vel
            .iter()
            .chain(self.qd.iter())
            .chain(std::iter::once(&self.base_ang_vel))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn base_height(&self) -> f64 {
        self.base_pos[1]
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation blew up at t = {:.4} s", .last_valid.sim_time)]
    BlowUp { last_valid: Box<SimState> },
    #[error("robot `{0}` has no built-in dynamics")]
    NoDynamics(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FallThresholds {
    pub min_base_height: f64,
    pub max_abs_pitch: f64,
}

impl FallThresholds {
    pub fn new(min_base_height: f64, max_abs_pitch: f64) -> Result<Self, ConfigError> {
        let t = Self { min_base_height, max_abs_pitch };
        t.validate()?;
        Ok(t)
    }

    /// Half the standing height, 1 rad of pitch.
    pub fn for_model(model: &RobotModel) -> Self {
        Self { min_base_height: 0.5 * model.base_standing_height, max_abs_pitch: 1.0 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.min_base_height > 0.0) {
            return Err(ConfigError::invalid("fall_thresholds", "min_base_height must be positive"));
        }
        if !(self.max_abs_pitch > 0.0 && self.max_abs_pitch < std::f64::consts::PI) {
            return Err(ConfigError::invalid("fall_thresholds", "max_abs_pitch must lie in (0, pi)"));
        }
        Ok(())
    }
}

/// Base height is measured above the terrain directly below the base.
pub fn is_fallen(state: &SimState, thresholds: &FallThresholds) -> bool {
    state.base_height() < thresholds.min_base_height || state.base_pitch.abs() > thresholds.max_abs_pitch
}

/// `τ_i = clamp(kp·(target_i − q_i) − kd·qd_i, ±limit_i)`.
pub fn pd_torque(
    gains: &PdGains,
    q_target: &[f64],
    q: &[f64],
    qd: &[f64],
    torque_limit: &[f64],
) -> Result<Vec<f64>, ConfigError> {
    let n = q.len();
    ConfigError::check_len("q_target", n, q_target.len())?;
    ConfigError::check_len("qd", n, qd.len())?;
    ConfigError::check_len("torque_limit", n, torque_limit.len())?;
    Ok((0..n)
        .map(|i| {
            let tau = gains.kp * (q_target[i] - q[i]) - gains.kd * qd[i];
            tau.clamp(-torque_limit[i], torque_limit[i])
        })
        .collect())
}

/// Result of one policy step of PD-tracked simulation.
#[derive(Clone, Debug)]
pub struct ControlStep {
    pub state: SimState,
    pub fell: bool,
    /// Sim time at which the fall was first detected.
    pub fall_time: Option<f64>,
    pub pd_ticks: u32,
    pub physics_steps: u32,
}

#[derive(Clone, Debug)]
enum Dynamics {
    Cartpole(CartpoleParams),
    Quadruped(Quadruped),
}

/// A robot together with the environment it is simulated in.
#[derive(Clone, Debug)]
pub struct World {
    model: RobotModel,
    dynamics: Dynamics,
    pub terrain: Terrain,
    pub contact: ContactParams,
    pub gravity: f64,
    /// Constant velocity command reported by the `command` segment.
    pub command: [f64; 3],
}

impl World {
    pub fn new(model: RobotModel) -> Result<Self, SimError> {
        model.validate()?;
        let dynamics = match model.kind {
            RobotKind::Cartpole => Dynamics::Cartpole(CartpoleParams::from_model(&model)),
            RobotKind::PlanarQuadruped => Dynamics::Quadruped(Quadruped::from_model(&model)),
            RobotKind::Kinematic => return Err(SimError::NoDynamics(model.name.clone())),
        };
        Ok(Self {
            model,
            dynamics,
            terrain: Terrain::flat(),
            contact: ContactParams::default(),
            gravity: GRAVITY,
            command: [0.0; 3],
        })
    }

    pub fn with_terrain(mut self, terrain: Terrain) -> Self {
        self.terrain = terrain;
        self
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    /// Default pose at rest; legged robots start with feet on the ground.
    pub fn initial_state(&self) -> SimState {
        self.initial_state_with(&self.model.default_pose)
    }

    pub fn initial_state_with(&self, pose: &[f64]) -> SimState {
        let n = self.model.n_joints();
        let mut s = SimState {
            base_pos: [0.0, 0.0],
            base_pitch: 0.0,
            base_lin_vel: [0.0, 0.0],
            base_ang_vel: 0.0,
            q: pose.to_vec(),
            qd: vec![0.0; n],
            foot_contacts: vec![false; self.model.n_legs()],
            contact_anchors: Vec::new(),
            last_action: pose.to_vec(),
            sim_time: 0.0,
        };
        match &self.dynamics {
            Dynamics::Cartpole(p) => cartpole::sync_base(p, &mut s),
            Dynamics::Quadruped(quad) => {
                s.contact_anchors = vec![None; quad.n_contact_points()];
                // Lower the torso until the lowest foot touches the ground.
                let feet = quad.foot_positions(&s);
                let clearance = feet
                    .iter()
                    .map(|f| f.y - self.terrain.height(f.x))
                    .fold(f64::INFINITY, f64::min);
                s.base_pos[1] -= clearance;
            }
        }
        s
    }

    /// One semi-implicit Euler step with joint torques held constant.
    /// Torques are clamped to the model's limits.
    pub fn step_physics(&self, state: &SimState, torques: &[f64], dt: f64) -> Result<SimState, SimError> {
        ConfigError::check_len("torques", self.model.n_joints(), torques.len())?;
        if !(dt > 0.0) {
            return Err(ConfigError::invalid("dt", "must be positive").into());
        }
        let tau: Vec<f64> = torques
            .iter()
            .zip(&self.model.torque_limit)
            .map(|(t, l)| t.clamp(-l, *l))
            .collect();
        let next = match &self.dynamics {
            Dynamics::Cartpole(p) => Some(cartpole::step(p, state, tau[0], self.gravity, dt)),
            Dynamics::Quadruped(quad) => quad.step(state, &tau, &self.contact, &self.terrain, self.gravity, dt),
        };
        match next {
            Some(mut next) if next.is_finite() && next.max_speed() < MAX_SPEED => {
                next.sim_time = state.sim_time + dt;
                Ok(next)
            }
            _ => Err(SimError::BlowUp { last_valid: Box::new(state.clone()) }),
        }
    }

    /// Contact forces acting at `state` (feet, knees, torso ends). Empty for
    /// robots without ground contact.
    pub fn contact_forces(&self, state: &SimState) -> Vec<ContactForce> {
        match &self.dynamics {
            Dynamics::Cartpole(_) => Vec::new(),
            Dynamics::Quadruped(quad) => {
                let mut anchors = state.contact_anchors.clone();
                quad.contact_forces(state, &self.contact, &self.terrain, &mut anchors)
                    .into_iter()
                    .map(|(f, _)| f)
                    .collect()
            }
        }
    }

    /// Kinetic plus potential energy, contacts excluded.
    pub fn mechanical_energy(&self, state: &SimState) -> f64 {
        match &self.dynamics {
            Dynamics::Cartpole(p) => p.energy(state.qd[0], state.base_pitch, state.base_ang_vel, self.gravity),
            Dynamics::Quadruped(quad) => quad.mechanical_energy(state, self.gravity),
        }
    }

    /// Foot positions in world coordinates (legged robots only).
    pub fn foot_positions(&self, state: &SimState) -> Vec<[f64; 2]> {
        match &self.dynamics {
            Dynamics::Cartpole(_) => Vec::new(),
            Dynamics::Quadruped(quad) => quad.foot_positions(state).iter().map(|p| [p.x, p.y]).collect(),
        }
    }

    /// Fall test with base height taken relative to the terrain below the base.
    pub fn is_fallen(&self, state: &SimState, thresholds: &FallThresholds) -> bool {
        let mut relative = state.clone();
        relative.base_pos[1] -= self.terrain.height(state.base_pos[0]);
        is_fallen(&relative, thresholds)
    }

    /// Holds `action` as the PD target for one policy period.
    pub fn run_control_substeps(
        &self,
        state: &SimState,
        action: &[f64],
        gains: &PdGains,
        timing: &TimingConfig,
        thresholds: &FallThresholds,
    ) -> Result<ControlStep, SimError> {
        ConfigError::check_len("action", self.model.n_joints(), action.len())?;
        timing.validate()?;
        let dt = timing.physics_dt();
        let start = state.sim_time;
        let mut s = state.clone();
        s.last_action = action.to_vec();
        let mut fall_time = None;
        let mut physics_steps = 0;
        let ticks = timing.pd_ticks_per_policy_step();
        for _ in 0..ticks {
            let tau = pd_torque(gains, action, &s.q, &s.qd, &self.model.torque_limit)?;
            for _ in 0..timing.physics_substeps_per_pd {
                s = self.step_physics(&s, &tau, dt)?;
                physics_steps += 1;
            }
            if fall_time.is_none() && self.is_fallen(&s, thresholds) {
                fall_time = Some(s.sim_time);
            }
        }
        s.sim_time = start + timing.policy_dt();
        Ok(ControlStep { state: s, fell: fall_time.is_some(), fall_time, pd_ticks: ticks, physics_steps })
    }

    /// Observation vector in `layout` order, with this world's command.
    pub fn observe(&self, state: &SimState, layout: &ObservationLayout) -> Result<Observation, ConfigError> {
        observe_with(state, layout, &self.command)
    }
}

/// A world plus the episode-local state and loop settings a controller
/// interacts with.
#[derive(Clone, Debug)]
pub struct Env {
    pub world: World,
    pub state: SimState,
    pub layout: ObservationLayout,
    pub gains: PdGains,
    pub timing: TimingConfig,
    pub thresholds: FallThresholds,
}

impl Env {
    pub fn new(world: World, layout: ObservationLayout, gains: PdGains, timing: TimingConfig) -> Self {
        let thresholds = FallThresholds::for_model(world.model());
        let state = world.initial_state();
        Self { world, state, layout, gains, timing, thresholds }
    }

    pub fn reset(&mut self, state: SimState) {
        self.state = state;
    }

    pub fn observe(&self) -> Result<Observation, ConfigError> {
        self.world.observe(&self.state, &self.layout)
    }

    /// Runs one policy period with `action` as the PD target.
    pub fn step(&mut self, action: &Action) -> Result<ControlStep, SimError> {
        let out = self.world.run_control_substeps(&self.state, &action.0, &self.gains, &self.timing, &self.thresholds)?;
        self.state = out.state.clone();
        Ok(out)
    }

    pub fn model(&self) -> &RobotModel {
        self.world.model()
    }
}

/// Flat-ground convenience wrapper around [`World::step_physics`].
pub fn step_physics(model: &RobotModel, state: &SimState, torques: &[f64], dt: f64) -> Result<SimState, SimError> {
    World::new(model.clone())?.step_physics(state, torques, dt)
}

/// Observation vector in `layout` order with a zero command.
///
/// Velocities and gravity are expressed in the base frame. Layouts with 3-D
/// base segments (A1-style) receive the planar state embedded in the x–z
/// plane, lateral components zero.
pub fn observe(model: &RobotModel, state: &SimState, layout: &ObservationLayout) -> Result<Observation, ConfigError> {
    ConfigError::check_len("state.q", model.n_joints(), state.q.len())?;
    observe_with(state, layout, &[0.0; 3])
}

fn observe_with(state: &SimState, layout: &ObservationLayout, command: &[f64; 3]) -> Result<Observation, ConfigError> {
    let (sn, cs) = state.base_pitch.sin_cos();
    let [vx, vz] = state.base_lin_vel;
    let mut out = Vec::with_capacity(layout.total_dim());
    for seg in layout.segments() {
        let planar: Vec<f64> = match seg.kind {
            SegmentKind::BaseLinVel => vec![cs * vx + sn * vz, -sn * vx + cs * vz],
            SegmentKind::ProjectedGravity => vec![-sn, -cs],
            SegmentKind::BaseAngVel => vec![state.base_ang_vel],
            SegmentKind::JointPos => state.q.clone(),
            SegmentKind::JointVel => state.qd.clone(),
            SegmentKind::PrevAction => state.last_action.clone(),
            SegmentKind::Command => command.to_vec(),
        };
        let values = match (seg.kind, seg.dim(), planar.len()) {
            (_, d, p) if d == p => planar,
            (SegmentKind::BaseLinVel | SegmentKind::ProjectedGravity, 3, 2) => vec![planar[0], 0.0, planar[1]],
            (SegmentKind::BaseAngVel, 3, 1) => vec![0.0, planar[0], 0.0],
            (_, d, p) => {
                return Err(ConfigError::LengthMismatch {
                    what: format!("segment {}", seg.kind),
                    expected: d,
                    actual: p,
                })
            }
        };
        out.extend(values);
    }
    Ok(Observation(out))
}
