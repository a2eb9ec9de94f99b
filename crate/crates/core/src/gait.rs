//! Scripted controllers and rollout recording.
//!
//! The scripted trot stands in for a trained locomotion policy: its
//! rollouts seed the text policy's history before control is handed over.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, LineCodec, FORMAT_VERSION};
use crate::error::ConfigError;
use crate::model::{RobotKind, RobotModel};
use crate::sim::{Action, Env, Observation, SimError, SimState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitParams {
    pub frequency: f64,
    pub hip_amplitude: f64,
    pub knee_amplitude: f64,
    /// One phase per leg, in `[0, 2π)`.
    pub phase_offsets: Vec<f64>,
    /// Knee target during stance; `None` uses the model's default knee angle.
    #[serde(default)]
    pub stance_knee: Option<f64>,
}

impl Default for GaitParams {
    /// Trot at 1.25 Hz: diagonal pairs (FL, RR) and (FR, RL) in antiphase.
    fn default() -> Self {
        Self {
            frequency: 1.25,
            hip_amplitude: 0.3,
            knee_amplitude: 0.5,
            phase_offsets: vec![0.0, PI, PI, 0.0],
            stance_knee: None,
        }
    }
}

impl GaitParams {
    pub fn validate(&self, model: &RobotModel) -> Result<(), ConfigError> {
        if !(self.frequency > 0.0) {
            return Err(ConfigError::invalid("gait.frequency", "must be positive"));
        }
        if !(self.hip_amplitude >= 0.0 && self.knee_amplitude >= 0.0) {
            return Err(ConfigError::invalid("gait", "amplitudes must be non-negative"));
        }
        if self.phase_offsets.iter().any(|p| !(0.0..2.0 * PI).contains(p)) {
            return Err(ConfigError::invalid("gait.phase_offsets", "must lie in [0, 2π)"));
        }
        ConfigError::check_len("gait.phase_offsets", model.n_legs(), self.phase_offsets.len())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }
}

/// Joint targets of the scripted trot at time `t`:
/// `hip = default + A_h·sin(2πft + φ)`,
/// `knee = stance + A_k·max(0, sin(2πft + φ))`, clamped to joint limits.
pub fn scripted_action(params: &GaitParams, t: f64, model: &RobotModel) -> Action {
    let stance_knee = |leg: usize| params.stance_knee.unwrap_or(model.default_pose[2 * leg + 1]);
    let mut out = model.default_pose.clone();
    for (leg, phase) in params.phase_offsets.iter().enumerate().take(model.n_legs()) {
        // Reduce to one cycle first so t and t + period agree.
        let cycle = (params.frequency * t).rem_euclid(1.0);
        let s = (2.0 * PI * cycle + phase).sin();
        let (h, k) = (2 * leg, 2 * leg + 1);
        out[h] = (model.default_pose[h] + params.hip_amplitude * s).clamp(model.joint_lower[h], model.joint_upper[h]);
        out[k] = (stance_knee(leg) + params.knee_amplitude * s.max(0.0))
            .clamp(model.joint_lower[k], model.joint_upper[k]);
    }
    Action(out)
}

/// Anything that maps (time, state) to joint targets.
pub trait Controller: Send {
    fn act(&mut self, t: f64, state: &SimState, model: &RobotModel) -> Action;
}

#[derive(Clone, Debug, Default)]
pub struct ScriptedGait {
    pub params: GaitParams,
}

impl ScriptedGait {
    pub fn new(params: GaitParams) -> Self {
        Self { params }
    }
}

impl Controller for ScriptedGait {
    fn act(&mut self, t: f64, _state: &SimState, model: &RobotModel) -> Action {
        scripted_action(&self.params, t, model)
    }
}

/// Cart-position targets that make the PD loop apply a linear balancing
/// force `F = k_θ·θ + k_ω·θ̇ + k_x·x + k_v·ẋ`.
#[derive(Clone, Debug)]
pub struct CartpoleBalancer {
    pub gains: [f64; 4],
    pub kp: f64,
    pub kd: f64,
}

impl CartpoleBalancer {
    pub fn new(kp: f64, kd: f64) -> Self {
        Self { gains: CARTPOLE_BALANCE_GAINS, kp, kd }
    }

    /// Balancing force for the current state, before actuator limits.
    pub fn force(&self, state: &SimState) -> f64 {
        let [k_theta, k_omega, k_x, k_v] = self.gains;
        k_theta * state.base_pitch + k_omega * state.base_ang_vel + k_x * state.q[0] + k_v * state.qd[0]
    }
}

/// Gains for the counter-clockwise pole angle convention (pole leaning
/// toward −x has θ > 0, so the cart must be pushed toward −x).
pub const CARTPOLE_BALANCE_GAINS: [f64; 4] = [-40.0, -8.0, 1.0, 2.0];

impl Controller for CartpoleBalancer {
    fn act(&mut self, _t: f64, state: &SimState, model: &RobotModel) -> Action {
        let f = self.force(state);
        let target = state.q[0] + (f + self.kd * state.qd[0]) / self.kp.max(1e-9);
        Action(vec![target.clamp(model.joint_lower[0], model.joint_upper[0])])
    }
}

/// Default controller for a model: the trot for legged robots, the
/// balancer for the cartpole.
pub fn default_controller(model: &RobotModel, gait: &GaitParams, kp: f64, kd: f64) -> Box<dyn Controller> {
    match model.kind {
        RobotKind::Cartpole => Box::new(CartpoleBalancer::new(kp, kd)),
        _ => Box::new(ScriptedGait::new(gait.clone())),
    }
}

/// Observation/action pairs recorded at the policy rate. The observation in
/// each pair was taken before its action was applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pairs: Vec<(Observation, Action)>,
    /// Sim time at which each observation was taken.
    pub times: Vec<f64>,
    pub dt: f64,
    pub robot: String,
}

impl Trajectory {
    pub fn new(robot: impl Into<String>, dt: f64) -> Self {
        Self { pairs: Vec::new(), times: Vec::new(), dt, robot: robot.into() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    pub fn push(&mut self, t: f64, obs: Observation, action: Action) {
        self.times.push(t);
        self.pairs.push((obs, action));
    }

    /// Writes a header line followed by one codec line per pair.
    pub fn write_records<W: Write>(&self, codec: &LineCodec, mut out: W) -> Result<(), TrajectoryIoError> {
        let header = RecordHeader {
            robot: self.robot.clone(),
            dt: self.dt,
            start_time: self.times.first().copied().unwrap_or(0.0),
            codec: codec.clone(),
        };
        writeln!(out, "#{FORMAT_VERSION} {}", serde_json::to_string(&header)?)?;
        for (obs, act) in &self.pairs {
            writeln!(out, "{}", codec.encode_pair(obs, act)?)?;
        }
        Ok(())
    }

    /// Reads a record file written by [`Trajectory::write_records`]. Values
    /// come back quantized by the stored codec.
    pub fn read_records<R: BufRead>(input: R) -> Result<(Trajectory, LineCodec), TrajectoryIoError> {
        let mut lines = input.lines();
        let first = lines.next().ok_or(TrajectoryIoError::MissingHeader)??;
        let prefix = format!("#{FORMAT_VERSION} ");
        let json = first.strip_prefix(&prefix).ok_or(TrajectoryIoError::MissingHeader)?;
        let header: RecordHeader = serde_json::from_str(json)?;
        let mut traj = Trajectory::new(header.robot, header.dt);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (obs, act) = header.codec.decode_pair(&line)?;
            traj.push(header.start_time + i as f64 * header.dt, obs, act);
        }
        Ok((traj, header.codec))
    }
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    robot: String,
    dt: f64,
    start_time: f64,
    codec: LineCodec,
}

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("missing `#{FORMAT_VERSION}` header line")]
    MissingHeader,
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("robot fell at t = {fall_time:.3} s after {} of {requested} steps", .prefix.len())]
    Fell { prefix: Trajectory, fall_time: f64, requested: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Runs `controller` for `n_steps` policy steps from the env's current
/// state, recording the observation seen before each action.
pub fn collect_rollout(env: &mut Env, controller: &mut dyn Controller, n_steps: usize) -> Result<Trajectory, RolloutError> {
    if n_steps == 0 {
        return Err(ConfigError::invalid("n_steps", "must be at least 1").into());
    }
    let mut traj = Trajectory::new(env.model().name.clone(), env.timing.policy_dt());
    for _ in 0..n_steps {
        let obs = env.observe()?;
        let t = env.state.sim_time;
        let action = controller.act(t, &env.state, env.world.model());
        let step = env.step(&action)?;
        traj.push(t, obs, action);
        if let Some(fall_time) = step.fall_time {
            return Err(RolloutError::Fell { prefix: traj, fall_time, requested: n_steps });
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::planar_quadruped_model;

    #[test]
    fn phase_zero_gives_default_hip_and_stance_knee() {
        let m = planar_quadruped_model();
        let p = GaitParams::default();
        // Leg 0 has phase 0, so sin term vanishes at t = 0 and t = period / 2.
        for t in [0.0, 0.4] {
            let a = scripted_action(&p, t, &m);
            assert!((a.0[0] - m.default_pose[0]).abs() < 1e-12);
            assert!((a.0[1] - m.default_pose[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_in_frequency() {
        let m = planar_quadruped_model();
        let p = GaitParams::default();
        for i in 0..200 {
            let t = i as f64 * 0.0137;
            let a = scripted_action(&p, t, &m);
            let b = scripted_action(&p, t + p.period(), &m);
            for (x, y) in a.0.iter().zip(&b.0) {
                assert!((x - y).abs() < 1e-12, "t={t}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn actions_within_limits_even_with_large_amplitudes() {
        let m = planar_quadruped_model();
        let p = GaitParams { hip_amplitude: 3.0, knee_amplitude: 5.0, ..GaitParams::default() };
        for i in 0..100 {
            let a = scripted_action(&p, i as f64 * 0.05, &m);
            for j in 0..8 {
                assert!(a.0[j] >= m.joint_lower[j] && a.0[j] <= m.joint_upper[j]);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let m = planar_quadruped_model();
        assert!(GaitParams { frequency: 0.0, ..GaitParams::default() }.validate(&m).is_err());
        assert!(GaitParams { phase_offsets: vec![0.0; 3], ..GaitParams::default() }.validate(&m).is_err());
        assert!(GaitParams { phase_offsets: vec![7.0, 0.0, 0.0, 0.0], ..GaitParams::default() }
            .validate(&m)
            .is_err());
        GaitParams::default().validate(&m).unwrap();
    }

    fn quad_env() -> Env {
        let m = planar_quadruped_model();
        Env::new(
            crate::sim::World::new(m.clone()).unwrap(),
            crate::model::planar_layout(&m),
            crate::model::PdGains::default(),
            crate::model::TimingConfig::default(),
        )
    }

    #[test]
    fn rollout_records_obs_before_action() {
        let mut env = quad_env();
        let first_obs = env.observe().unwrap();
        let traj = collect_rollout(&mut env, &mut ScriptedGait::default(), 20).unwrap();
        assert_eq!(traj.len(), 20);
        assert_eq!(traj.pairs[0].0, first_obs);
        assert!((traj.duration() - 2.0).abs() < 1e-12);
        for (i, t) in traj.times.iter().enumerate() {
            assert!((t - 0.1 * i as f64).abs() < 1e-9);
        }
        assert!(collect_rollout(&mut env, &mut ScriptedGait::default(), 0).is_err());
    }

    #[test]
    fn trot_walks_forward_without_falling() {
        let mut env = quad_env();
        collect_rollout(&mut env, &mut ScriptedGait::default(), 100).unwrap();
        assert!(env.state.base_pos[0] > 2.0, "x = {}", env.state.base_pos[0]);
    }

    #[test]
    fn records_round_trip_within_quantization() {
        let mut env = quad_env();
        let traj = collect_rollout(&mut env, &mut ScriptedGait::default(), 10).unwrap();
        let m = env.model().clone();
        let codec = LineCodec::new(
            crate::codec::NormalizationMode::PositiveInt,
            env.layout.ranges(),
            crate::model::action_ranges(&m),
            200,
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_records(&codec, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#p2w-v1 "));
        assert_eq!(text.lines().count(), 11);
        let (back, codec2) = Trajectory::read_records(&buf[..]).unwrap();
        assert_eq!(codec2, codec);
        assert_eq!(back.len(), 10);
        for ((o, a), (bo, ba)) in traj.pairs.iter().zip(&back.pairs) {
            for j in 0..a.dim() {
                assert!((a.0[j] - ba.0[j]).abs() <= codec.action.quantization_step(j) / 2.0 + 1e-9);
            }
            for j in 0..o.dim() {
                let (lo, hi) = codec.obs.ranges[j];
                assert!((o.0[j].clamp(lo, hi) - bo.0[j]).abs() <= codec.obs.quantization_step(j) / 2.0 + 1e-9);
            }
        }
        assert!(matches!(Trajectory::read_records(&b"no header\n"[..]), Err(TrajectoryIoError::MissingHeader)));
    }

    #[test]
    fn balancer_holds_cartpole() {
        let m = crate::model::cartpole_model();
        for th0 in [0.05, -0.05] {
            let mut env = Env::new(
                crate::sim::World::new(m.clone()).unwrap(),
                crate::model::default_layout(&m),
                crate::model::PdGains::default(),
                crate::model::TimingConfig::default(),
            );
            env.state.base_pitch = th0;
            let mut c = CartpoleBalancer::new(20.0, 0.5);
            collect_rollout(&mut env, &mut c, 100).unwrap();
            assert!(env.state.base_pitch.abs() < 0.01);
        }
    }
}
