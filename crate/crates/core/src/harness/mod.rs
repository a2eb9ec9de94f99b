//! Closed-loop episodes, experiments, ablation suites and their outputs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{parse_action_text, LineCodec, FORMAT_VERSION};
use crate::error::ConfigError;
use crate::gait::{collect_rollout, default_controller, RolloutError};
use crate::model::{RobotKind, RobotModel};
use crate::policy::{
    redact, ConstantPolicy, NnPatternPolicy, OraclePolicy, PolicyUnavailable, RemotePolicy, ReplayPolicy,
    StepContext, TextPolicy,
};
use crate::prompt::{
    default_sections, estimate_tokens, DescriptionSections, HistoryBuffer, PromptBuilder,
    SectionTemplates,
};
use crate::sim::{Action, Env, SimError, Terrain, World};

pub mod ablation;
pub mod config;
pub mod plot;
pub mod transcript;

pub use ablation::{run_ablation_suite, AblationReport, AblationRow, Suite};
pub use config::{ExperimentConfig, PolicyConfig, PolicyKind};
pub use transcript::{read_transcript, replay_transcript, ReplayReport, StepRecord, Transcript, TranscriptRecord};

/// Consecutive unparseable responses tolerated before an episode aborts.
pub const MAX_CONSECUTIVE_PARSE_FAILURES: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    ConfigFile(#[from] config::ConfigFileError),
    #[error("policy setup failed: {0}")]
    Policy(#[from] PolicyUnavailable),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("transcript {path}: {reason}")]
    Transcript { path: PathBuf, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unknown suite `{0}` (expected description, history_length, observation or normalization)")]
    UnknownSuite(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Fell,
    /// The policy could not answer; counted as a fall at that time.
    PolicyUnavailable { reason: String },
    /// Too many consecutive unparseable responses; counted as a fall.
    ParseFailures,
    /// The simulation diverged; counted as a fall.
    SimDiverged { reason: String },
    /// The scripted warm start itself fell; no policy step ran.
    WarmStartFell,
    /// The trial could not be set up at all.
    Setup { reason: String },
}

impl Termination {
    pub fn tag(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Fell => "fell",
            Termination::PolicyUnavailable { .. } => "policy_unavailable",
            Termination::ParseFailures => "parse_failures",
            Termination::SimDiverged { .. } => "sim_diverged",
            Termination::WarmStartFell => "warm_start_fell",
            Termination::Setup { .. } => "setup",
        }
    }

    /// Infrastructure problem rather than a controller outcome.
    pub fn is_infrastructure(&self) -> bool {
        matches!(self, Termination::SimDiverged { .. } | Termination::Setup { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub trial: usize,
    pub seed: u64,
    pub normalized_walking_time: f64,
    pub success: bool,
    /// Policy steps whose action was executed.
    pub steps_executed: usize,
    /// Seconds after hand-over at which the episode ended early.
    pub fall_time: Option<f64>,
    pub termination: Termination,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Mean estimated prompt size per decision.
    pub mean_prompt_tokens: f64,
    pub parse_failures: usize,
    /// Observation and action values clamped while building prompts.
    pub saturated_values: usize,
    /// Forward base displacement during policy control (m).
    pub distance: f64,
    pub transcript_path: Option<PathBuf>,
    pub transcript_missing: bool,
}

/// Walked fraction of the episode, clamped to `[0, 1]`.
pub fn normalized_walking_time(walked: f64, episode_length: f64) -> f64 {
    if episode_length <= 0.0 {
        return 0.0;
    }
    (walked / episode_length).clamp(0.0, 1.0)
}

impl EpisodeResult {
    /// Result for an episode that ended `walked` seconds after hand-over.
    /// `None` means it ran to the end.
    pub fn from_outcome(
        trial: usize,
        seed: u64,
        episode_length: f64,
        walked: Option<f64>,
        termination: Termination,
    ) -> Self {
        let (nwt, success) = match walked {
            None => (1.0, true),
            Some(t) => (normalized_walking_time(t, episode_length), false),
        };
        Self {
            trial,
            seed,
            normalized_walking_time: nwt,
            success,
            steps_executed: 0,
            fall_time: walked,
            termination,
            input_tokens: 0,
            output_tokens: 0,
            mean_prompt_tokens: 0.0,
            parse_failures: 0,
            saturated_values: 0,
            distance: 0.0,
            transcript_path: None,
            transcript_missing: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub trials: Vec<EpisodeResult>,
    pub mean_nwt: f64,
    pub success_rate: f64,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    pub mean_prompt_tokens: f64,
    /// Trials that ended for infrastructure reasons.
    pub failures: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl ExperimentSummary {
    pub fn from_results(name: impl Into<String>, mut trials: Vec<EpisodeResult>) -> Self {
        trials.sort_by_key(|r| r.trial);
        let n = trials.len().max(1) as f64;
        Self {
            name: name.into(),
            mean_nwt: mean(trials.iter().map(|r| r.normalized_walking_time)),
            success_rate: trials.iter().filter(|r| r.success).count() as f64 / n,
            mean_input_tokens: mean(trials.iter().map(|r| r.input_tokens as f64)),
            mean_output_tokens: mean(trials.iter().map(|r| r.output_tokens as f64)),
            mean_prompt_tokens: mean(trials.iter().map(|r| r.mean_prompt_tokens)),
            failures: trials.iter().filter(|r| r.termination.is_infrastructure()).count(),
            trials,
        }
    }

    pub fn successes(&self) -> usize {
        self.trials.iter().filter(|r| r.success).count()
    }

    pub fn total_input_tokens(&self) -> u64 {
        self.trials.iter().map(|r| r.input_tokens).sum()
    }
}

/// Per-trial seeds derived from the master seed.
pub fn trial_seeds(master_seed: u64, trials: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..trials).map(|_| rng.next_u64()).collect()
}

/// Builds the policies for each trial of an experiment. Remote clones share
/// one connection pool and in-flight cap.
pub enum PolicySource {
    Oracle,
    NnPattern,
    Replay(Vec<String>),
    Remote(RemotePolicy),
    Constant(String),
}

impl PolicySource {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        Ok(match cfg.policy.kind {
            PolicyKind::Oracle => PolicySource::Oracle,
            PolicyKind::NnPattern => PolicySource::NnPattern,
            PolicyKind::Constant => PolicySource::Constant(cfg.policy.constant_text.clone().unwrap_or_default()),
            PolicyKind::Remote => PolicySource::Remote(RemotePolicy::from_env(cfg.llm.clone())?),
            PolicyKind::Replay => {
                let path = cfg.policy.replay_path.as_deref().ok_or_else(|| {
                    ConfigError::invalid("policy.replay_path", "required for replay")
                })?;
                PolicySource::Replay(read_transcript(path)?.responses())
            }
        })
    }

    pub fn make(&self, cfg: &ExperimentConfig, model: &RobotModel) -> Box<dyn TextPolicy> {
        match self {
            PolicySource::Oracle => {
                Box::new(OraclePolicy::new(default_controller(model, &cfg.gait, cfg.gains.kp, cfg.gains.kd)))
            }
            PolicySource::NnPattern => Box::new(NnPatternPolicy),
            PolicySource::Replay(r) => Box::new(ReplayPolicy::new(r.clone())),
            PolicySource::Remote(r) => Box::new(r.clone()),
            PolicySource::Constant(t) => Box::new(ConstantPolicy { text: t.clone() }),
        }
    }
}

/// Environment for one trial: seeded terrain and a perturbed initial pose.
pub fn trial_env(cfg: &ExperimentConfig, model: &RobotModel, seed: u64) -> Result<Env, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terrain_seed = rng.next_u64();
    let world = World::new(model.clone())
        .map_err(|e| ConfigError::invalid("robot", e.to_string()))?
        .with_terrain(Terrain::from_config(&cfg.terrain, terrain_seed));
    let noise = cfg.initial_noise;
    let mut jitter = || if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
    let pose: Vec<f64> = (0..model.n_joints())
        .map(|i| (model.default_pose[i] + jitter()).clamp(model.joint_lower[i], model.joint_upper[i]))
        .collect();
    let mut state = world.initial_state_with(&pose);
    if model.kind == RobotKind::Cartpole {
        state.base_pitch = jitter();
    }
    let mut env = Env::new(world, cfg.layout(model)?, cfg.gains, cfg.timing);
    env.reset(state);
    Ok(env)
}

/// Description sections for `cfg`, with only its listed sections enabled.
pub fn sections_for(
    cfg: &ExperimentConfig,
    model: &RobotModel,
    codec: &LineCodec,
) -> Result<DescriptionSections, HarnessError> {
    let templates = match &cfg.templates_dir {
        Some(dir) => SectionTemplates::from_dir(dir).map_err(io_err(dir))?,
        None => SectionTemplates::default(),
    };
    let layout = cfg.layout(model)?;
    let sections = default_sections(model, &layout, &cfg.timing, &cfg.gains, codec, &templates);
    Ok(sections.with_only(&cfg.section_kinds()?))
}

/// Runs one trial: warm start with the scripted controller for
/// `history_length` steps, then hand control to `policy` for
/// `episode_length` seconds. Writes a transcript when a path is given.
pub fn run_episode(
    cfg: &ExperimentConfig,
    trial: usize,
    seed: u64,
    policy: &mut dyn TextPolicy,
    transcript: Option<&Path>,
) -> EpisodeResult {
    let mut log = transcript::TranscriptWriter::new(transcript.is_some());
    let mut result = match episode_inner(cfg, trial, seed, policy, &mut log) {
        Ok(r) => r,
        Err(e) => EpisodeResult::from_outcome(trial, seed, cfg.episode_length, Some(0.0), Termination::Setup {
            reason: e.to_string(),
        }),
    };
    if let Some(path) = transcript {
        result.transcript_path = Some(path.to_path_buf());
        log.result(&result);
        if let Err(e) = log.write(path, policy.secret().as_deref()) {
            log::warn!("transcript {} not written: {e}", path.display());
            result.transcript_missing = true;
        }
    }
    result
}

fn episode_inner(
    cfg: &ExperimentConfig,
    trial: usize,
    seed: u64,
    policy: &mut dyn TextPolicy,
    log: &mut transcript::TranscriptWriter,
) -> Result<EpisodeResult, HarnessError> {
    cfg.validate()?;
    let model = cfg.robot_model()?;
    let codec = cfg.codec(&model).map_err(|e| ConfigError::invalid("normalization", e.to_string()))?;
    let sections = sections_for(cfg, &model, &codec)?;
    let builder = PromptBuilder { token_budget: cfg.token_budget, ..PromptBuilder::default() };
    let mut env = trial_env(cfg, &model, seed)?;
    let mut history = HistoryBuffer::new(cfg.history_length, env.layout.total_dim(), model.n_joints());
    let mut prev_action = Action(model.default_pose.clone());
    let mut warm_lines = Vec::with_capacity(cfg.history_length);

    if cfg.history_length > 0 {
        let mut controller = default_controller(&model, &cfg.gait, cfg.gains.kp, cfg.gains.kd);
        match collect_rollout(&mut env, controller.as_mut(), cfg.history_length) {
            Ok(traj) => {
                for (o, a) in traj.pairs {
                    warm_lines.push(codec.encode_pair(&o, &a).unwrap_or_default());
                    history.push(o, a.clone())?;
                    prev_action = a;
                }
            }
            Err(RolloutError::Fell { .. }) => {
                log.header(cfg, policy.name(), trial, seed, env.state.sim_time, warm_lines);
                return Ok(EpisodeResult::from_outcome(trial, seed, cfg.episode_length, Some(0.0), Termination::WarmStartFell));
            }
            Err(RolloutError::Config(e)) => return Err(e.into()),
            Err(RolloutError::Sim(e)) => return Err(ConfigError::invalid("warm start", e.to_string()).into()),
        }
    }

    let handover = env.state.sim_time;
    let start_x = env.state.base_pos[0];
    log.header(cfg, policy.name(), trial, seed, handover, warm_lines);

    let n_steps = cfg.episode_steps();
    let (mut input_tokens, mut output_tokens, mut prompt_tokens) = (0u64, 0u64, 0u64);
    let (mut consecutive_failures, mut parse_failures, mut saturated) = (0usize, 0usize, 0usize);
    let (mut steps_executed, mut prompts_built) = (0, 0usize);
    let mut ended: Option<(f64, Termination)> = None;

    for step in 0..n_steps {
        let t = env.state.sim_time;
        let obs = env.observe()?;
        let prompt = builder
            .build(&sections, &history, &obs, &codec)
            .map_err(|e| ConfigError::invalid("prompt", e.to_string()))?;
        log.prompt(&prompt);
        prompts_built += 1;
        saturated += prompt.saturated;
        prompt_tokens += prompt.estimated_tokens as u64;
        let mut rec = StepRecord::new(step, t, &obs, &codec, &prompt);

        let ctx = StepContext {
            sim_time: t,
            step_index: step,
            state: &env.state,
            model: &model,
            history: &history,
            current_obs: &obs,
            codec: &codec,
        };
        let response = match policy.decide(&prompt, &ctx) {
            Ok(r) => r,
            Err(e) => {
                input_tokens += prompt.estimated_tokens as u64;
                rec.policy_error = Some(e.to_string());
                log.step(rec);
                ended = Some((t, Termination::PolicyUnavailable { reason: e.tag().to_string() }));
                break;
            }
        };
        match response.token_usage {
            Some(u) => {
                input_tokens += u.input;
                output_tokens += u.output;
            }
            None => {
                input_tokens += prompt.estimated_tokens as u64;
                output_tokens += estimate_tokens(&response.raw_text) as u64;
            }
        }
        rec.response = Some(response.raw_text.clone());
        rec.max_output_tokens = response.max_output_tokens;

        let action = match parse_action_text(&response.raw_text, &codec.action, model.n_joints()) {
            Ok(a) => {
                consecutive_failures = 0;
                rec.parsed = Some(a.0.clone());
                a
            }
            Err(e) => {
                consecutive_failures += 1;
                parse_failures += 1;
                rec.parse_error = Some(e.to_string());
                if consecutive_failures >= MAX_CONSECUTIVE_PARSE_FAILURES {
                    log.step(rec);
                    ended = Some((t, Termination::ParseFailures));
                    break;
                }
                prev_action.clone()
            }
        };

        let outcome = match env.step(&action) {
            Ok(o) => o,
            Err(SimError::BlowUp { last_valid }) => {
                log.step(rec);
                ended = Some((last_valid.sim_time, Termination::SimDiverged { reason: "non-finite state".into() }));
                break;
            }
            Err(e) => return Err(ConfigError::invalid("simulation", e.to_string()).into()),
        };
        steps_executed += 1;
        rec.executed = Some(action.0.clone());
        rec.fell = outcome.fell;
        rec.set_state(&env.state);
        log.step(rec);
        history.push(obs, action.clone())?;
        prev_action = action;
        if let Some(ft) = outcome.fall_time {
            ended = Some((ft, Termination::Fell));
            break;
        }
    }

    let mut result = match ended {
        None => EpisodeResult::from_outcome(trial, seed, cfg.episode_length, None, Termination::Completed),
        Some((t, why)) => EpisodeResult::from_outcome(trial, seed, cfg.episode_length, Some(t - handover), why),
    };
    result.steps_executed = steps_executed;
    result.input_tokens = input_tokens;
    result.output_tokens = output_tokens;
    result.mean_prompt_tokens = prompt_tokens as f64 / prompts_built.max(1) as f64;
    result.parse_failures = parse_failures;
    result.saturated_values = saturated;
    result.distance = env.state.base_pos[0] - start_x;
    Ok(result)
}

/// Runs every trial of `cfg`. Transcripts go to `out_dir` when given.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    let source = PolicySource::from_config(cfg)?;
    run_experiment_with(cfg, &source, out_dir)
}

pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    source: &PolicySource,
    out_dir: Option<&Path>,
) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    let model = cfg.robot_model()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let seeds = trial_seeds(cfg.master_seed, cfg.trials);
    let transcript_path = |i: usize| {
        out_dir.filter(|_| cfg.write_transcripts).map(|d| d.join(format!("trial_{i:02}.jsonl")))
    };
    let run_trial = |i: usize| {
        let mut policy = source.make(cfg, &model);
        run_episode(cfg, i, seeds[i], policy.as_mut(), transcript_path(i).as_deref())
    };

    let results = if cfg.parallel_trials <= 1 || cfg.trials == 1 {
        (0..cfg.trials).map(run_trial).collect()
    } else {
        let next = AtomicUsize::new(0);
        let out = Mutex::new(Vec::with_capacity(cfg.trials));
        std::thread::scope(|s| {
            for _ in 0..cfg.parallel_trials.min(cfg.trials) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= cfg.trials {
                        break;
                    }
                    let r = run_trial(i);
                    out.lock().unwrap_or_else(|e| e.into_inner()).push(r);
                });
            }
        });
        out.into_inner().unwrap_or_else(|e| e.into_inner())
    };
    Ok(ExperimentSummary::from_results(cfg.name.clone(), results))
}

/// Per-trial rows, fixed column order.
#[derive(Debug, Serialize)]
struct TrialRow<'a> {
    format: &'static str,
    experiment: &'a str,
    trial: usize,
    seed: u64,
    nwt: f64,
    success: bool,
    steps_executed: usize,
    fall_time: Option<f64>,
    termination: &'static str,
    input_tokens: u64,
    output_tokens: u64,
    mean_prompt_tokens: f64,
    parse_failures: usize,
    distance: f64,
    transcript_missing: bool,
}

pub fn write_trials_csv<W: std::io::Write>(summary: &ExperimentSummary, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in &summary.trials {
        w.serialize(TrialRow {
            format: FORMAT_VERSION,
            experiment: &summary.name,
            trial: r.trial,
            seed: r.seed,
            nwt: r.normalized_walking_time,
            success: r.success,
            steps_executed: r.steps_executed,
            fall_time: r.fall_time,
            termination: r.termination.tag(),
            input_tokens: r.input_tokens,
            output_tokens: r.output_tokens,
            mean_prompt_tokens: r.mean_prompt_tokens,
            parse_failures: r.parse_failures,
            distance: r.distance,
            transcript_missing: r.transcript_missing,
        })?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: PathBuf::from("<csv>"), source })?;
    Ok(())
}

/// Strips any occurrence of `secret` before bytes are persisted.
pub(crate) fn scrub(text: &str, secret: Option<&str>) -> String {
    redact(text, secret)
}
