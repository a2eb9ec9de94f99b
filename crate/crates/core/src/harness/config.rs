//! Declarative experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{CodecError, LineCodec, NormalizationMode, DEFAULT_RESOLUTION};
use crate::error::ConfigError;
use crate::gait::GaitParams;
use crate::model::{
    action_ranges, cartpole_model, default_layout, layout_from_names, planar_quadruped_model, ObservationLayout,
    PdGains, RobotModel, SegmentKind, TimingConfig,
};
use crate::policy::LlmConfig;
use crate::prompt::{SectionKind, DEFAULT_TOKEN_BUDGET};
use crate::sim::TerrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Scripted controller serialized through the text path.
    Oracle,
    NnPattern,
    /// Responses read back from a transcript.
    Replay,
    Remote,
    /// The same text every step.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Transcript to take responses from (`replay`).
    pub replay_path: Option<PathBuf>,
    /// Reply text (`constant`).
    pub constant_text: Option<String>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { kind: PolicyKind::Oracle, replay_path: None, constant_text: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Built-in robot: `planar_quadruped` or `cartpole`. Ignored when
    /// `robot_model` is given.
    pub robot: String,
    /// Inline robot definition.
    pub robot_model: Option<RobotModel>,
    /// Episode length in seconds of policy control, after the warm start.
    pub episode_length: f64,
    pub trials: usize,
    pub master_seed: u64,
    /// History pairs in the prompt; also the number of warm-start steps.
    pub history_length: usize,
    /// Enabled description sections, by short name (`td io jo cp ai`).
    pub sections: Vec<String>,
    /// Observation segments; empty list means no observation at all.
    /// `None` uses the robot's full default layout.
    pub observation: Option<Vec<String>>,
    pub normalization: NormalizationMode,
    pub resolution: u32,
    /// Uniform noise (rad or m) added to the initial joint pose per trial.
    pub initial_noise: f64,
    /// Trials run concurrently.
    pub parallel_trials: usize,
    pub token_budget: usize,
    /// Cost guard: an ablation suite stops launching cells once its input
    /// tokens exceed this.
    pub max_suite_input_tokens: Option<u64>,
    pub output_dir: PathBuf,
    /// Directory with replacement section templates.
    pub templates_dir: Option<PathBuf>,
    pub write_transcripts: bool,
    pub terrain: TerrainConfig,
    pub timing: TimingConfig,
    pub gains: PdGains,
    pub gait: GaitParams,
    pub policy: PolicyConfig,
    pub llm: LlmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            robot: "planar_quadruped".into(),
            robot_model: None,
            episode_length: 10.0,
            trials: 5,
            master_seed: 0,
            history_length: 50,
            sections: SectionKind::ALL.iter().map(|k| k.short().to_string()).collect(),
            observation: None,
            normalization: NormalizationMode::PositiveInt,
            resolution: DEFAULT_RESOLUTION,
            initial_noise: 0.02,
            parallel_trials: 1,
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_suite_input_tokens: None,
            output_dir: PathBuf::from("runs"),
            templates_dir: None,
            write_transcripts: true,
            terrain: TerrainConfig::default(),
            timing: TimingConfig::default(),
            gains: PdGains::default(),
            gait: GaitParams::default(),
            policy: PolicyConfig::default(),
            llm: LlmConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
    #[error("override path `{0}` does not name a table")]
    BadPath(String),
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigFileError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigFileError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides, where `key` is a dotted path
    /// (`llm.temperature`, `terrain.amplitude`). Values are parsed as TOML
    /// and fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigFileError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = toml::Table::try_from(self).expect("config serializes");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigFileError::BadOverride(o.to_string()))?;
            let value = parse_value(raw.trim());
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigFileError::BadOverride(o.into()))?;
            let mut table = &mut tree;
            for p in parts {
                table = table
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| ConfigFileError::BadPath(key.to_string()))?;
            }
            table.insert(last.to_string(), value);
        }
        let cfg: Self = tree.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return Err(ConfigError::invalid("trials", "must be at least 1"));
        }
        if !(self.episode_length > 0.0) {
            return Err(ConfigError::invalid("episode_length", "must be positive"));
        }
        if self.parallel_trials == 0 {
            return Err(ConfigError::invalid("parallel_trials", "must be at least 1"));
        }
        if !(self.initial_noise >= 0.0) {
            return Err(ConfigError::invalid("initial_noise", "must be non-negative"));
        }
        self.timing.validate()?;
        self.gains.validate()?;
        self.llm.validate()?;
        let model = self.robot_model()?;
        if model.n_legs() > 0 {
            self.gait.validate(&model)?;
        }
        self.section_kinds()?;
        self.layout(&model)?;
        self.codec(&model).map_err(|e| ConfigError::invalid("normalization", e.to_string()))?;
        match self.policy.kind {
            PolicyKind::Replay if self.policy.replay_path.is_none() => {
                Err(ConfigError::invalid("policy.replay_path", "required for replay"))
            }
            PolicyKind::Constant if self.policy.constant_text.is_none() => {
                Err(ConfigError::invalid("policy.constant_text", "required for constant"))
            }
            _ => Ok(()),
        }
    }

    pub fn robot_model(&self) -> Result<RobotModel, ConfigError> {
        let model = match (&self.robot_model, self.robot.as_str()) {
            (Some(m), _) => m.clone(),
            (None, "planar_quadruped") => planar_quadruped_model(),
            (None, "cartpole") => cartpole_model(),
            (None, other) => return Err(ConfigError::invalid("robot", format!("unknown robot `{other}`"))),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn section_kinds(&self) -> Result<Vec<SectionKind>, ConfigError> {
        self.sections.iter().map(|s| SectionKind::parse(s)).collect()
    }

    pub fn layout(&self, model: &RobotModel) -> Result<ObservationLayout, ConfigError> {
        match &self.observation {
            None => Ok(default_layout(model)),
            Some(names) => layout_from_names(model, names),
        }
    }

    pub fn codec(&self, model: &RobotModel) -> Result<LineCodec, CodecError> {
        let layout = self.layout(model).map_err(|e| CodecError::InvalidSpec(e.to_string()))?;
        LineCodec::new(self.normalization, layout.ranges(), action_ranges(model), self.resolution)
    }

    /// Number of policy decisions in a full episode.
    pub fn episode_steps(&self) -> usize {
        (self.episode_length * self.timing.policy_hz as f64).round() as usize
    }

    /// Segment names of the observation actually used.
    pub fn observation_names(&self, model: &RobotModel) -> Vec<String> {
        self.layout(model)
            .map(|l| l.segments().iter().map(|s| s.kind.as_str().to_string()).collect())
            .unwrap_or_default()
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

pub fn segment_names(kinds: &[SegmentKind]) -> Vec<String> {
    kinds.iter().map(|k| k.as_str().to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.trials, 5);
        assert_eq!(c.episode_length, 10.0);
        assert_eq!(c.episode_steps(), 100);
        assert_eq!(c.llm.temperature, 0.0);
        assert_eq!(c.sections.len(), 5);
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig { history_length: 30, ..ExperimentConfig::default() };
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "history_length = 10\nnormalization = \"RAW\"\n[terrain]\namplitude = 0.02\n[policy]\nkind = \"nn_pattern\"\n",
        )
        .unwrap();
        assert_eq!(c.history_length, 10);
        assert_eq!(c.normalization, NormalizationMode::Raw);
        assert_eq!(c.terrain.amplitude, 0.02);
        assert_eq!(c.policy.kind, PolicyKind::NnPattern);
        assert_eq!(c.trials, 5);
    }

    #[test]
    fn overrides() {
        let c = ExperimentConfig::default()
            .with_overrides(&["llm.temperature=0.5", "trials=2", "name=abc", "observation=[\"joint_pos\"]"])
            .unwrap();
        assert_eq!(c.llm.temperature, 0.5);
        assert_eq!(c.trials, 2);
        assert_eq!(c.name, "abc");
        assert_eq!(c.observation, Some(vec!["joint_pos".to_string()]));
        assert!(ExperimentConfig::default().with_overrides(&["trials=0"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["nonsense"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["bogus_field=1"]).is_err());
    }

    #[test]
    fn unknown_robot_and_sections_rejected() {
        assert!(ExperimentConfig { robot: "ant".into(), ..ExperimentConfig::default() }.validate().is_err());
        assert!(ExperimentConfig { sections: vec!["zz".into()], ..ExperimentConfig::default() }.validate().is_err());
        assert!(ExperimentConfig { policy: PolicyConfig { kind: PolicyKind::Replay, ..PolicyConfig::default() }, ..ExperimentConfig::default() }.validate().is_err());
    }

    #[test]
    fn inline_robot_model() {
        let mut m = planar_quadruped_model();
        m.name = "custom".into();
        let c = ExperimentConfig { robot_model: Some(m), ..ExperimentConfig::default() };
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back.robot_model().unwrap().name, "custom");
    }
}
