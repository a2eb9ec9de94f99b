//! Text-in/text-out policies. Every implementation sees the same prompt and
//! returns raw text; parsing happens in the harness via the codec.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{normalize, CodecError, LineCodec, TokenizedVector};
use crate::gait::Controller;
use crate::model::RobotModel;
use crate::prompt::{HistoryBuffer, PromptBundle};
use crate::sim::{Observation, SimState};

pub mod remote;
pub mod stub;

pub use remote::{redact, LlmConfig, RemotePolicy, REDACTED};

/// Everything a policy may look at besides the prompt text. Simulated time
/// is frozen while `decide` runs.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub sim_time: f64,
    pub step_index: usize,
    pub state: &'a SimState,
    pub model: &'a RobotModel,
    pub history: &'a HistoryBuffer,
    pub current_obs: &'a Observation,
    pub codec: &'a LineCodec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub raw_text: String,
    /// Wall-clock seconds spent in `decide`.
    pub latency: f64,
    /// Counts reported by the endpoint, if any.
    pub token_usage: Option<TokenUsage>,
    /// Output cap sent with the request, if any.
    pub max_output_tokens: Option<u32>,
}

impl PolicyResponse {
    pub fn local(raw_text: String, started: Instant) -> Self {
        Self { raw_text, latency: started.elapsed().as_secs_f64(), token_usage: None, max_output_tokens: None }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyUnavailable {
    #[error("recording exhausted after {0} responses")]
    Exhausted(usize),
    #[error("no history to match against")]
    NoContext,
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {cause}")]
    Transport { attempts: u32, cause: String },
    #[error("endpoint returned HTTP {status} after {attempts} attempt(s): {body}")]
    Http { status: u16, attempts: u32, body: String },
    #[error("malformed completion payload: {0}")]
    Malformed(String),
    #[error("API key variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("could not encode action: {0}")]
    Encode(#[from] CodecError),
}

impl PolicyUnavailable {
    /// Short stable tag for transcripts and CSV rows.
    pub fn tag(&self) -> &'static str {
        match self {
            PolicyUnavailable::Exhausted(_) => "exhausted",
            PolicyUnavailable::NoContext => "no_context",
            PolicyUnavailable::EmptyPrompt => "empty_prompt",
            PolicyUnavailable::Timeout { .. } => "timeout",
            PolicyUnavailable::Transport { .. } => "transport",
            PolicyUnavailable::Http { .. } => "http",
            PolicyUnavailable::Malformed(_) => "malformed",
            PolicyUnavailable::MissingApiKey(_) => "missing_api_key",
            PolicyUnavailable::Encode(_) => "encode",
        }
    }
}

pub trait TextPolicy: Send {
    fn name(&self) -> &str;

    fn decide(&mut self, prompt: &PromptBundle, ctx: &StepContext<'_>) -> Result<PolicyResponse, PolicyUnavailable>;

    /// Whether identical inputs always give identical text.
    fn is_deterministic(&self) -> bool {
        true
    }

    /// Secret that must never reach persisted bytes.
    fn secret(&self) -> Option<String> {
        None
    }
}

fn check_prompt(prompt: &PromptBundle) -> Result<(), PolicyUnavailable> {
    if prompt.text.trim().is_empty() {
        Err(PolicyUnavailable::EmptyPrompt)
    } else {
        Ok(())
    }
}

/// Wraps a controller so its actions travel through the text path.
pub struct OraclePolicy {
    controller: Box<dyn Controller>,
}

impl OraclePolicy {
    pub fn new(controller: Box<dyn Controller>) -> Self {
        Self { controller }
    }
}

impl TextPolicy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn decide(&mut self, prompt: &PromptBundle, ctx: &StepContext<'_>) -> Result<PolicyResponse, PolicyUnavailable> {
        let started = Instant::now();
        check_prompt(prompt)?;
        let action = self.controller.act(ctx.sim_time, ctx.state, ctx.model);
        Ok(PolicyResponse::local(ctx.codec.encode_action(&action)?, started))
    }
}

/// Plays back recorded responses in order.
#[derive(Clone, Debug)]
pub struct ReplayPolicy {
    responses: Vec<String>,
    cursor: usize,
}

impl ReplayPolicy {
    pub fn new(responses: Vec<String>) -> Self {
        Self { responses, cursor: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.responses.len() - self.cursor
    }
}

impl TextPolicy for ReplayPolicy {
    fn name(&self) -> &str {
        "replay"
    }

    fn decide(&mut self, prompt: &PromptBundle, _ctx: &StepContext<'_>) -> Result<PolicyResponse, PolicyUnavailable> {
        let started = Instant::now();
        check_prompt(prompt)?;
        let text = self.responses.get(self.cursor).ok_or(PolicyUnavailable::Exhausted(self.responses.len()))?;
        self.cursor += 1;
        Ok(PolicyResponse::local(text.clone(), started))
    }
}

/// Answers every prompt with the same text.
#[derive(Clone, Debug)]
pub struct ConstantPolicy {
    pub text: String,
}

impl TextPolicy for ConstantPolicy {
    fn name(&self) -> &str {
        "constant"
    }

    fn decide(&mut self, prompt: &PromptBundle, _ctx: &StepContext<'_>) -> Result<PolicyResponse, PolicyUnavailable> {
        let started = Instant::now();
        check_prompt(prompt)?;
        Ok(PolicyResponse::local(self.text.clone(), started))
    }
}

fn token_values(t: &TokenizedVector) -> Vec<f64> {
    t.tokens.iter().map(|s| s.parse::<f64>().unwrap_or(f64::NAN)).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Action tokens that followed the history observation closest (L1 over
/// tokens) to `current`. Ties go to the most recent pair.
pub fn nn_pattern_decide(
    history: &HistoryBuffer,
    current: &Observation,
    codec: &LineCodec,
) -> Result<String, PolicyUnavailable> {
    let target = token_values(&normalize(&current.0, &codec.obs)?);
    let mut best: Option<(f64, &crate::sim::Action)> = None;
    for (obs, act) in history.iter() {
        let d = l1(&token_values(&normalize(&obs.0, &codec.obs)?), &target);
        if best.is_none_or(|(bd, _)| d <= bd) {
            best = Some((d, act));
        }
    }
    let (_, act) = best.ok_or(PolicyUnavailable::NoContext)?;
    Ok(codec.encode_action(act)?)
}

/// Same rule as [`nn_pattern_decide`], working on prompt text alone: every
/// line containing the pair separator is a history line, and the line
/// before the action marker is the current observation.
pub fn nn_pattern_from_text(user_text: &str) -> Option<String> {
    let numbers = |s: &str| -> Option<Vec<f64>> { s.split_whitespace().map(|w| w.parse().ok()).collect() };
    let mut pairs = Vec::new();
    let mut current = None;
    for line in user_text.lines() {
        match line.split_once('|') {
            Some((o, a)) => pairs.push((numbers(o)?, a.trim().to_string())),
            None => {
                if let Some(v) = numbers(line).filter(|v| !v.is_empty()) {
                    current = Some(v);
                }
            }
        }
    }
    let current = current?;
    let mut best: Option<(f64, &String)> = None;
    for (o, a) in &pairs {
        if o.len() != current.len() {
            continue;
        }
        let d = l1(o, &current);
        if best.is_none_or(|(bd, _)| d <= bd) {
            best = Some((d, a));
        }
    }
    best.map(|(_, a)| a.clone())
}

/// Local in-context stand-in: nearest-neighbour completion over the history.
#[derive(Clone, Copy, Debug, Default)]
pub struct NnPatternPolicy;

impl TextPolicy for NnPatternPolicy {
    fn name(&self) -> &str {
        "nn_pattern"
    }

    fn decide(&mut self, prompt: &PromptBundle, ctx: &StepContext<'_>) -> Result<PolicyResponse, PolicyUnavailable> {
        let started = Instant::now();
        check_prompt(prompt)?;
        let text = nn_pattern_decide(ctx.history, ctx.current_obs, ctx.codec)?;
        Ok(PolicyResponse::local(text, started))
    }
}
