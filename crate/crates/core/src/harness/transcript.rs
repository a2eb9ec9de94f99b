//! Line-delimited episode transcripts.
//!
//! One JSON object per line: a header, each distinct description prompt
//! once (keyed by its settings hash), one record per control step, and the
//! episode result. Nothing time-of-day dependent is stored, so identical
//! runs give identical bytes.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, run_episode, scrub, EpisodeResult, ExperimentConfig, HarnessError};
use crate::codec::{LineCodec, FORMAT_VERSION};
use crate::policy::ReplayPolicy;
use crate::prompt::{text_hash, PromptBundle};
use crate::sim::{Observation, SimState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub format: String,
    pub policy: String,
    pub trial: usize,
    pub seed: u64,
    /// Sim time at which the policy took over.
    pub handover_time: f64,
    /// Warm-start history in line format.
    pub warm_start: Vec<String>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub sim_time: f64,
    pub obs: Vec<f64>,
    pub obs_tokens: String,
    /// Hash of the full prompt text.
    pub prompt_hash: String,
    /// Hash of the prompt settings; the description text is stored once
    /// under this key.
    pub config_hash: String,
    pub estimated_tokens: usize,
    pub response: Option<String>,
    pub max_output_tokens: Option<u32>,
    pub policy_error: Option<String>,
    pub parsed: Option<Vec<f64>>,
    pub parse_error: Option<String>,
    /// Joint targets actually held for this step.
    pub executed: Option<Vec<f64>>,
    pub fell: bool,
    /// Base position and pitch after the step.
    pub base_x: Option<f64>,
    pub base_z: Option<f64>,
    pub pitch: Option<f64>,
}

impl StepRecord {
    pub(crate) fn new(step: usize, t: f64, obs: &Observation, codec: &LineCodec, prompt: &PromptBundle) -> Self {
        Self {
            step,
            sim_time: t,
            obs: obs.0.clone(),
            obs_tokens: codec.encode_obs(obs).unwrap_or_default(),
            prompt_hash: text_hash(&prompt.text),
            config_hash: prompt.config_hash.clone(),
            estimated_tokens: prompt.estimated_tokens,
            response: None,
            max_output_tokens: None,
            policy_error: None,
            parsed: None,
            parse_error: None,
            executed: None,
            fell: false,
            base_x: None,
            base_z: None,
            pitch: None,
        }
    }

    pub(crate) fn set_state(&mut self, s: &SimState) {
        self.base_x = Some(s.base_pos[0]);
        self.base_z = Some(s.base_pos[1]);
        self.pitch = Some(s.base_pitch);
    }

    /// The parts that define the simulated trajectory.
    fn trajectory(&self) -> (usize, u64, Vec<u64>, Option<Vec<u64>>, bool) {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        (self.step, self.sim_time.to_bits(), bits(&self.obs), self.executed.as_deref().map(bits), self.fell)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptRecord {
    Header(TranscriptHeader),
    Prompt { config_hash: String, system_text: String },
    Step(StepRecord),
    Result(EpisodeResult),
}

pub(crate) struct TranscriptWriter {
    enabled: bool,
    lines: Vec<String>,
    seen: BTreeSet<String>,
}

impl TranscriptWriter {
    pub(crate) fn new(enabled: bool) -> Self {
        Self { enabled, lines: Vec::new(), seen: BTreeSet::new() }
    }

    fn push(&mut self, rec: &TranscriptRecord) {
        if self.enabled {
            self.lines.push(serde_json::to_string(rec).expect("records serialize"));
        }
    }

    pub(crate) fn header(
        &mut self,
        cfg: &ExperimentConfig,
        policy: &str,
        trial: usize,
        seed: u64,
        handover_time: f64,
        warm_start: Vec<String>,
    ) {
        self.push(&TranscriptRecord::Header(TranscriptHeader {
            format: FORMAT_VERSION.to_string(),
            policy: policy.to_string(),
            trial,
            seed,
            handover_time,
            warm_start,
            config: cfg.clone(),
        }));
    }

    pub(crate) fn prompt(&mut self, p: &PromptBundle) {
        if self.enabled && self.seen.insert(p.config_hash.clone()) {
            self.push(&TranscriptRecord::Prompt {
                config_hash: p.config_hash.clone(),
                system_text: p.system_text.clone(),
            });
        }
    }

    pub(crate) fn step(&mut self, rec: StepRecord) {
        self.push(&TranscriptRecord::Step(rec));
    }

    pub(crate) fn result(&mut self, r: &EpisodeResult) {
        self.push(&TranscriptRecord::Result(r.clone()));
    }

    pub(crate) fn write(&self, path: &Path, secret: Option<&str>) -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = self.lines.join("\n");
        text.push('\n');
        std::fs::write(path, scrub(&text, secret))
    }
}

/// Parsed transcript file.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub prompts: Vec<(String, String)>,
    pub steps: Vec<StepRecord>,
    pub result: Option<EpisodeResult>,
}

impl Transcript {
    /// Raw responses in step order, stopping at the first step without one.
    pub fn responses(&self) -> Vec<String> {
        self.steps.iter().map_while(|s| s.response.clone()).collect()
    }
}

pub fn read_transcript(path: &Path) -> Result<Transcript, HarnessError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let bad = |reason: String| HarnessError::Transcript { path: path.to_path_buf(), reason };
    let (mut header, mut prompts, mut steps, mut result) = (None, Vec::new(), Vec::new(), None);
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TranscriptRecord =
            serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
        match rec {
            TranscriptRecord::Header(h) => {
                if h.format != FORMAT_VERSION {
                    return Err(bad(format!("unsupported format `{}`", h.format)));
                }
                header = Some(h);
            }
            TranscriptRecord::Prompt { config_hash, system_text } => prompts.push((config_hash, system_text)),
            TranscriptRecord::Step(s) => steps.push(s),
            TranscriptRecord::Result(r) => result = Some(r),
        }
    }
    let header = header.ok_or_else(|| bad("missing header".into()))?;
    Ok(Transcript { header, prompts, steps, result })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub original: Transcript,
    pub replayed: EpisodeResult,
    pub replayed_steps: Vec<StepRecord>,
    /// Every step's time, observation, executed action and fall flag match
    /// bit for bit.
    pub identical: bool,
    /// First step at which the trajectories differ.
    pub first_divergence: Option<usize>,
}

/// Re-runs the recorded episode with its own responses played back.
pub fn replay_transcript(path: &Path, out: Option<&Path>) -> Result<ReplayReport, HarnessError> {
    let original = read_transcript(path)?;
    let cfg = original.header.config.clone();
    let mut policy = ReplayPolicy::new(original.responses());
    let tmp;
    let out_path: PathBuf = match out {
        Some(p) => p.to_path_buf(),
        None => {
            static COUNTER: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
            let n = COUNTER.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            tmp = std::env::temp_dir().join(format!("llmwalk-replay-{}-{n}.jsonl", std::process::id()));
            tmp.clone()
        }
    };
    let replayed = run_episode(&cfg, original.header.trial, original.header.seed, &mut policy, Some(&out_path));
    let again = read_transcript(&out_path)?;
    if out.is_none() {
        let _ = std::fs::remove_file(&out_path);
    }
    let first_divergence = (0..original.steps.len().max(again.steps.len())).find(|&i| {
        match (original.steps.get(i), again.steps.get(i)) {
            (Some(a), Some(b)) => a.trajectory() != b.trajectory(),
            _ => true,
        }
    });
    Ok(ReplayReport {
        identical: first_divergence.is_none(),
        first_divergence,
        original,
        replayed,
        replayed_steps: again.steps,
    })
}
