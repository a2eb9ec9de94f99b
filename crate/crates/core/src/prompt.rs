//! Prompt assembly: description sections, the bounded observation/action
//! history, and token estimation.
//!
//! Section wording lives in plain-text templates under `assets/sections/`
//! (compiled in as defaults, overridable from a directory at runtime).
//! Placeholders are written `{name}`; see [`PLACEHOLDERS`].

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{CodecError, LineCodec, NormalizationMode, FORMAT_VERSION};
use crate::error::ConfigError;
use crate::model::{ObservationLayout, PdGains, RobotKind, RobotModel, SegmentKind, TimingConfig};
use crate::sim::{Action, Observation};

/// Sentinel line after the current observation; the model's reply follows it.
pub const ACTION_MARKER: &str = ">>> action:";
pub const DEFAULT_TOKEN_BUDGET: usize = 8000;

/// Every placeholder the built-in renderer substitutes.
pub const PLACEHOLDERS: &[&str] = &[
    "robot_name",
    "policy_hz",
    "policy_period_ms",
    "pd_hz",
    "pd_ticks",
    "kp",
    "kd",
    "n_joints",
    "joint_list",
    "obs_dim",
    "act_dim",
    "obs_table",
    "act_table",
    "resolution",
    "value_format",
    "joint_conventions",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    TaskDescription,
    IoMeaning,
    JointOrder,
    ControlPipeline,
    AdditionalIllustration,
}

impl SectionKind {
    /// Rendering order.
    pub const ALL: [SectionKind; 5] = [
        SectionKind::TaskDescription,
        SectionKind::IoMeaning,
        SectionKind::JointOrder,
        SectionKind::ControlPipeline,
        SectionKind::AdditionalIllustration,
    ];

    pub fn short(self) -> &'static str {
        match self {
            SectionKind::TaskDescription => "td",
            SectionKind::IoMeaning => "io",
            SectionKind::JointOrder => "jo",
            SectionKind::ControlPipeline => "cp",
            SectionKind::AdditionalIllustration => "ai",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            SectionKind::TaskDescription => "task_description.txt",
            SectionKind::IoMeaning => "io_meaning.txt",
            SectionKind::JointOrder => "joint_order.txt",
            SectionKind::ControlPipeline => "control_pipeline.txt",
            SectionKind::AdditionalIllustration => "additional_illustration.txt",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|k| k.short().eq_ignore_ascii_case(s) || format!("{k:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| ConfigError::invalid("sections", format!("unknown section `{s}`")))
    }
}

/// Raw section templates, one per [`SectionKind`], in rendering order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SectionTemplates {
    texts: [String; 5],
}

impl Default for SectionTemplates {
    fn default() -> Self {
        Self {
            texts: [
                include_str!("../assets/sections/task_description.txt").to_string(),
                include_str!("../assets/sections/io_meaning.txt").to_string(),
                include_str!("../assets/sections/joint_order.txt").to_string(),
                include_str!("../assets/sections/control_pipeline.txt").to_string(),
                include_str!("../assets/sections/additional_illustration.txt").to_string(),
            ],
        }
    }
}

impl SectionTemplates {
    /// Loads templates from `dir`, falling back to the built-in text for
    /// any file that is absent.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut out = Self::default();
        for (i, kind) in SectionKind::ALL.iter().enumerate() {
            let path = dir.join(kind.file_name());
            if path.exists() {
                out.texts[i] = std::fs::read_to_string(path)?;
            }
        }
        Ok(out)
    }

    pub fn get(&self, kind: SectionKind) -> &str {
        &self.texts[kind as usize]
    }
}

/// Rendered description prompt; each section can be switched off.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionSections {
    pub texts: [String; 5],
    pub enabled: [bool; 5],
}

impl DescriptionSections {
    pub fn text(&self, kind: SectionKind) -> &str {
        &self.texts[kind as usize]
    }

    pub fn is_enabled(&self, kind: SectionKind) -> bool {
        self.enabled[kind as usize]
    }

    pub fn set_enabled(&mut self, kind: SectionKind, on: bool) {
        self.enabled[kind as usize] = on;
    }

    /// Enables exactly the listed sections.
    pub fn with_only(mut self, kinds: &[SectionKind]) -> Self {
        for k in SectionKind::ALL {
            self.enabled[k as usize] = kinds.contains(&k);
        }
        self
    }

    pub fn enabled_kinds(&self) -> Vec<SectionKind> {
        SectionKind::ALL.into_iter().filter(|k| self.is_enabled(*k)).collect()
    }

    /// Enabled sections in fixed order, each followed by a blank line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for k in self.enabled_kinds() {
            out.push_str(self.text(k).trim_end());
            out.push_str("\n\n");
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for k in self.enabled_kinds() {
            if self.text(k).trim().is_empty() {
                return Err(ConfigError::invalid("sections", format!("enabled section {k:?} is empty")));
            }
        }
        Ok(())
    }
}

fn value_format(mode: NormalizationMode, resolution: u32) -> String {
    match mode {
        NormalizationMode::PositiveInt => format!(
            "every value was mapped linearly from its physical range onto the integers 0 to {resolution}, \
             where 0 is the lower end of the range and {resolution} the upper end."
        ),
        NormalizationMode::Raw => "values are physical quantities written with four decimals.".into(),
        NormalizationMode::Positive => {
            "every value was shifted by the lower end of its range so that it is non-negative (four decimals).".into()
        }
        NormalizationMode::Integer => "every value was rounded to the nearest integer.".into(),
        NormalizationMode::TruncatePositiveInt => "the decimals of every value were discarded and the result \
             shifted by the truncated lower end of its range, giving non-negative integers."
            .into(),
    }
}

/// Physical unit of every observation dimension.
fn layout_units(layout: &ObservationLayout, model: &RobotModel) -> Vec<&'static str> {
    let prismatic = model.kind == RobotKind::Cartpole;
    let mut out = Vec::with_capacity(layout.total_dim());
    for seg in layout.segments() {
        let unit = match seg.kind {
            SegmentKind::BaseLinVel | SegmentKind::Command => "m/s",
            SegmentKind::BaseAngVel => "rad/s",
            SegmentKind::ProjectedGravity => "unit vector component",
            SegmentKind::JointPos | SegmentKind::PrevAction if prismatic => "m",
            SegmentKind::JointPos | SegmentKind::PrevAction => "rad",
            SegmentKind::JointVel if prismatic => "m/s",
            SegmentKind::JointVel => "rad/s",
        };
        out.extend(std::iter::repeat_n(unit, seg.dim()));
    }
    out
}

fn joint_conventions(model: &RobotModel) -> String {
    match model.kind {
        RobotKind::Cartpole => "The single joint is the horizontal cart position in metres; \
             the pole is not actuated and must be kept upright by moving the cart."
            .into(),
        _ => "Angles are in radians. A positive hip angle swings the foot backward. \
             Knee angles are negative, and a more negative knee angle means a more bent leg."
            .into(),
    }
}

fn range_table(
    labels: &[String],
    units: &[&str],
    ranges: &[(f64, f64)],
    mode: NormalizationMode,
    resolution: u32,
) -> String {
    let mut out = String::new();
    for (i, ((label, unit), (lo, hi))) in labels.iter().zip(units).zip(ranges).enumerate() {
        let _ = match mode {
            NormalizationMode::PositiveInt => {
                writeln!(out, "  {}. {label} ({unit}): 0 = {lo:.2}, {resolution} = {hi:.2}", i + 1)
            }
            _ => writeln!(out, "  {}. {label} ({unit}): range [{lo:.2}, {hi:.2}]", i + 1),
        };
    }
    out.truncate(out.trim_end().len());
    out
}

fn render_template(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Renders every section from templates for the given robot and loop
/// settings. All sections start enabled.
pub fn default_sections(
    model: &RobotModel,
    layout: &ObservationLayout,
    timing: &TimingConfig,
    gains: &PdGains,
    codec: &LineCodec,
    templates: &SectionTemplates,
) -> DescriptionSections {
    let mode = codec.mode();
    let resolution = codec.resolution();
    let act_labels: Vec<String> = model.joint_names.iter().map(|n| format!("target[{n}]")).collect();
    let act_unit = if model.kind == RobotKind::Cartpole { "m" } else { "rad" };
    let act_units = vec![act_unit; model.n_joints()];
    let vars = [
        ("robot_name", model.name.clone()),
        ("policy_hz", timing.policy_hz.to_string()),
        ("policy_period_ms", format!("{}", 1000 / timing.policy_hz.max(1))),
        ("pd_hz", timing.pd_hz.to_string()),
        ("pd_ticks", timing.pd_ticks_per_policy_step().to_string()),
        ("kp", format!("{}", gains.kp)),
        ("kd", format!("{}", gains.kd)),
        ("n_joints", model.n_joints().to_string()),
        ("joint_list", model.joint_names.join(", ")),
        ("obs_dim", layout.total_dim().to_string()),
        ("act_dim", model.n_joints().to_string()),
        ("obs_table", range_table(&layout.labels(model), &layout_units(layout, model), &codec.obs.ranges, mode, resolution)),
        ("act_table", range_table(&act_labels, &act_units, &codec.action.ranges, mode, resolution)),
        ("resolution", resolution.to_string()),
        ("value_format", value_format(mode, resolution)),
        ("joint_conventions", joint_conventions(model)),
    ];
    let texts = SectionKind::ALL.map(|k| render_template(templates.get(k), &vars));
    DescriptionSections { texts, enabled: [true; 5] }
}

/// Bounded FIFO of observation/action pairs, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    pairs: VecDeque<(Observation, Action)>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self { capacity, obs_dim, act_dim, pairs: VecDeque::with_capacity(capacity + 1) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Appends a pair, evicting the oldest when over capacity.
    pub fn push(&mut self, obs: Observation, action: Action) -> Result<(), ConfigError> {
        ConfigError::check_len("history observation", self.obs_dim, obs.dim())?;
        ConfigError::check_len("history action", self.act_dim, action.dim())?;
        self.pairs.push_back((obs, action));
        while self.pairs.len() > self.capacity {
            self.pairs.pop_front();
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Observation, Action)> {
        self.pairs.iter()
    }

    pub fn last(&self) -> Option<&(Observation, Action)> {
        self.pairs.back()
    }
}

/// Token count estimate for a piece of prompt text.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(bytes / 4)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ByteHeuristic;

impl TokenEstimator for ByteHeuristic {
    fn estimate(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    ByteHeuristic.estimate(text)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// Full prompt: `system_text` followed by `user_text`.
    pub text: String,
    /// Enabled description sections.
    pub system_text: String,
    /// History lines, current observation and the action marker.
    pub user_text: String,
    pub estimated_tokens: usize,
    pub history_len: usize,
    /// Hex SHA-256 over every setting that shapes the prompt (not the data).
    pub config_hash: String,
    pub over_budget: bool,
    /// Values clamped while encoding this prompt.
    pub saturated: usize,
}

/// Stateless prompt builder with a pluggable token estimator.
pub struct PromptBuilder {
    pub estimator: Box<dyn TokenEstimator>,
    pub token_budget: usize,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self { estimator: Box::new(ByteHeuristic), token_budget: DEFAULT_TOKEN_BUDGET }
    }
}

impl std::fmt::Debug for PromptBuilder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PromptBuilder").field("token_budget", &self.token_budget).finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct HashedSettings<'a> {
    format: &'static str,
    marker: &'static str,
    sections: &'a DescriptionSections,
    codec: &'a LineCodec,
    history_capacity: usize,
}

/// Digest of every prompt-shaping setting.
pub fn config_hash(sections: &DescriptionSections, codec: &LineCodec, history_capacity: usize) -> String {
    let settings = HashedSettings { format: FORMAT_VERSION, marker: ACTION_MARKER, sections, codec, history_capacity };
    let bytes = serde_json::to_vec(&settings).expect("settings serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl PromptBuilder {
    pub fn build(
        &self,
        sections: &DescriptionSections,
        history: &HistoryBuffer,
        current_obs: &Observation,
        codec: &LineCodec,
    ) -> Result<PromptBundle, CodecError> {
        if current_obs.dim() != history.obs_dim() {
            return Err(CodecError::DimMismatch { expected: history.obs_dim(), actual: current_obs.dim() });
        }
        let system_text = sections.render();
        let mut user_text = String::new();
        let mut saturated = 0;
        for (obs, act) in history.iter() {
            let (o, so) = crate::codec::normalize_counting(&obs.0, &codec.obs)?;
            let (a, sa) = crate::codec::normalize_counting(&act.0, &codec.action)?;
            saturated += so + sa;
            user_text.push_str(&o.join());
            user_text.push_str(crate::codec::PAIR_SEPARATOR);
            user_text.push_str(&a.join());
            user_text.push('\n');
        }
        let (cur, sc) = crate::codec::normalize_counting(&current_obs.0, &codec.obs)?;
        saturated += sc;
        user_text.push_str(&cur.join());
        user_text.push('\n');
        user_text.push_str(ACTION_MARKER);
        user_text.push('\n');

        let text = format!("{system_text}{user_text}");
        let estimated_tokens = self.estimator.estimate(&text);
        let over_budget = estimated_tokens > self.token_budget;
        if over_budget {
            log::warn!("prompt estimate {estimated_tokens} tokens exceeds budget {}", self.token_budget);
        }
        Ok(PromptBundle {
            text,
            system_text,
            user_text,
            estimated_tokens,
            history_len: history.len(),
            config_hash: config_hash(sections, codec, history.capacity()),
            over_budget,
            saturated,
        })
    }
}

/// [`PromptBuilder::build`] with the default estimator and budget.
pub fn build_prompt(
    sections: &DescriptionSections,
    history: &HistoryBuffer,
    current_obs: &Observation,
    codec: &LineCodec,
) -> Result<PromptBundle, CodecError> {
    PromptBuilder::default().build(sections, history, current_obs, codec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{action_ranges, planar_layout, planar_quadruped_model};

    fn setup() -> (RobotModel, ObservationLayout, LineCodec, DescriptionSections) {
        let m = planar_quadruped_model();
        let layout = planar_layout(&m);
        let codec = LineCodec::new(NormalizationMode::PositiveInt, layout.ranges(), action_ranges(&m), 200).unwrap();
        let sections = default_sections(
            &m,
            &layout,
            &TimingConfig::default(),
            &PdGains::default(),
            &codec,
            &SectionTemplates::default(),
        );
        (m, layout, codec, sections)
    }

    #[test]
    fn sections_are_templated() {
        let (m, _, _, s) = setup();
        assert!(s.text(SectionKind::TaskDescription).contains("10 Hz"));
        let jo = s.text(SectionKind::JointOrder);
        let listed: Vec<_> = m.joint_names.iter().filter(|n| jo.contains(n.as_str())).collect();
        assert_eq!(listed.len(), m.n_joints());
        let order: Vec<usize> = m.joint_names.iter().map(|n| jo.find(n.as_str()).unwrap()).collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        assert!(s.text(SectionKind::AdditionalIllustration).contains("0 to 200"));
        for k in SectionKind::ALL {
            assert!(!s.text(k).contains('{'), "unrendered placeholder in {k:?}");
        }
        s.validate().unwrap();
    }

    #[test]
    fn history_fifo() {
        let mut h = HistoryBuffer::new(50, 1, 1);
        h.push(Observation(vec![0.0]), Action(vec![0.0])).unwrap();
        assert_eq!(h.len(), 1);
        for i in 2..=60 {
            h.push(Observation(vec![i as f64]), Action(vec![i as f64])).unwrap();
        }
        assert_eq!(h.len(), 50);
        let firsts: Vec<f64> = h.iter().map(|(o, _)| o.0[0]).collect();
        assert_eq!(firsts, (11..=60).map(|i| i as f64).collect::<Vec<_>>());
        assert!(h.push(Observation(vec![0.0, 1.0]), Action(vec![0.0])).is_err());
    }

    #[test]
    fn zero_capacity_keeps_nothing() {
        let mut h = HistoryBuffer::new(0, 1, 1);
        h.push(Observation(vec![0.0]), Action(vec![0.0])).unwrap();
        assert!(h.is_empty());
    }

    #[test]
    fn bare_prompt_is_obs_and_marker() {
        let (_, layout, codec, s) = setup();
        let s = s.with_only(&[]);
        let h = HistoryBuffer::new(0, layout.total_dim(), 8);
        let obs = Observation(vec![0.0; 21]);
        let p = build_prompt(&s, &h, &obs, &codec).unwrap();
        let expected = format!("{}\n{ACTION_MARKER}\n", codec.encode_obs(&obs).unwrap());
        assert_eq!(p.text, expected);
        assert_eq!(p.system_text, "");
    }

    #[test]
    fn disabling_a_section_removes_exactly_its_bytes() {
        let (_, layout, codec, s) = setup();
        let h = HistoryBuffer::new(0, layout.total_dim(), 8);
        let obs = Observation(vec![0.0; 21]);
        let full = build_prompt(&s, &h, &obs, &codec).unwrap();
        for k in SectionKind::ALL {
            let mut less = s.clone();
            less.set_enabled(k, false);
            let p = build_prompt(&less, &h, &obs, &codec).unwrap();
            let removed = format!("{}\n\n", s.text(k).trim_end());
            assert_eq!(p.text.len() + removed.len(), full.text.len());
            assert_eq!(full.text.replacen(&removed, "", 1), p.text);
            assert_ne!(p.config_hash, full.config_hash);
        }
    }

    #[test]
    fn deterministic_and_history_lines_match_codec() {
        let (_, layout, codec, s) = setup();
        let mut h = HistoryBuffer::new(10, layout.total_dim(), 8);
        for i in 0..12 {
            h.push(Observation(vec![i as f64 * 0.01; 21]), Action(vec![-1.0 + i as f64 * 0.01; 8])).unwrap();
        }
        let obs = Observation(vec![0.3; 21]);
        let a = build_prompt(&s, &h, &obs, &codec).unwrap();
        let b = build_prompt(&s, &h, &obs, &codec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history_len, 10);
        let lines: Vec<&str> = a.user_text.lines().collect();
        for (line, (o, act)) in lines.iter().zip(h.iter()) {
            assert_eq!(*line, codec.encode_pair(o, act).unwrap());
        }
        assert_eq!(lines.len(), 12);
        assert_eq!(*lines.last().unwrap(), ACTION_MARKER);
    }

    #[test]
    fn estimate_tokens_basics() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abc"), 1);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn budget_flag() {
        let (_, layout, codec, s) = setup();
        let h = HistoryBuffer::new(0, layout.total_dim(), 8);
        let builder = PromptBuilder { token_budget: 10, ..PromptBuilder::default() };
        let p = builder.build(&s, &h, &Observation(vec![0.0; 21]), &codec).unwrap();
        assert!(p.over_budget);
    }

    #[test]
    fn section_names_parse() {
        assert_eq!(SectionKind::parse("td").unwrap(), SectionKind::TaskDescription);
        assert_eq!(SectionKind::parse("IoMeaning").unwrap(), SectionKind::IoMeaning);
        assert!(SectionKind::parse("xx").is_err());
    }
}
