//! Chat-completion client.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{check_prompt, PolicyResponse, PolicyUnavailable, StepContext, TextPolicy, TokenUsage};
use crate::codec::LineCodec;
use crate::error::ConfigError;
use crate::prompt::{estimate_tokens, PromptBundle};

pub const REDACTED: &str = "[REDACTED]";

/// Replaces every occurrence of `secret` in `text`.
pub fn redact(text: &str, secret: Option<&str>) -> String {
    match secret {
        Some(s) if !s.is_empty() => text.replace(s, REDACTED),
        _ => text.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    /// Seconds per attempt.
    pub request_timeout: f64,
    pub max_retries: u32,
    /// First backoff delay in seconds; doubles on every retry.
    pub backoff_base: f64,
    /// Name of the environment variable holding the key. The key itself is
    /// never part of the config.
    pub api_key_env: Option<String>,
    /// Concurrent requests allowed across every clone of one client.
    pub max_in_flight: usize,
    /// Send the description as a system message and the history as the user
    /// message; otherwise everything goes in one user message.
    pub split_system: bool,
    /// Output cap as a multiple of the expected action length.
    pub output_token_factor: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8089/v1/chat/completions".into(),
            model_name: "gpt-4".into(),
            temperature: 0.0,
            request_timeout: 30.0,
            max_retries: 3,
            backoff_base: 1.0,
            api_key_env: Some("OPENAI_API_KEY".into()),
            max_in_flight: 2,
            split_system: true,
            output_token_factor: 4,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.temperature >= 0.0) {
            return Err(ConfigError::invalid("llm.temperature", "must be non-negative"));
        }
        if !(self.request_timeout > 0.0) {
            return Err(ConfigError::invalid("llm.request_timeout", "must be positive"));
        }
        if !(self.backoff_base >= 0.0) {
            return Err(ConfigError::invalid("llm.backoff_base", "must be non-negative"));
        }
        if self.max_in_flight == 0 {
            return Err(ConfigError::invalid("llm.max_in_flight", "must be at least 1"));
        }
        if self.endpoint_url.is_empty() {
            return Err(ConfigError::invalid("llm.endpoint_url", "must not be empty"));
        }
        Ok(())
    }

    pub fn backoff(&self, retry: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_base * 2f64.powi(retry as i32))
    }
}

/// Rough token count of one well-formed action reply.
pub fn expected_output_tokens(codec: &LineCodec) -> u32 {
    let width = if codec.mode().is_integer() { codec.resolution().to_string().len() } else { 8 };
    let line = vec!["0".repeat(width); codec.action.dim()].join(" ");
    estimate_tokens(&line).max(1) as u32
}

#[derive(Debug, Default)]
struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self, cap: usize) -> Permit<'_> {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.count.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Policy backed by a chat-completion endpoint. Clones share one HTTP
/// client and one in-flight cap.
#[derive(Clone)]
pub struct RemotePolicy {
    config: LlmConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    in_flight: Arc<InFlight>,
}

impl std::fmt::Debug for RemotePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemotePolicy")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| REDACTED))
            .finish()
    }
}

enum Attempt {
    Retry(PolicyUnavailable),
    Fatal(PolicyUnavailable),
}

impl RemotePolicy {
    /// Resolves the API key from the environment variable named in `config`.
    pub fn from_env(config: LlmConfig) -> Result<Self, PolicyUnavailable> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| PolicyUnavailable::MissingApiKey(var.clone()))?),
            None => None,
        };
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: LlmConfig, api_key: Option<String>) -> Result<Self, PolicyUnavailable> {
        config.validate().map_err(|e| PolicyUnavailable::Transport { attempts: 0, cause: e.to_string() })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout))
            .build()
            .map_err(|e| PolicyUnavailable::Transport { attempts: 0, cause: e.to_string() })?;
        Ok(Self { config, api_key, client, in_flight: Arc::new(InFlight::default()) })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn attempt(&self, body: &ChatRequest<'_>, attempts: u32) -> Result<PolicyResponse, Attempt> {
        let secret = self.api_key.as_deref();
        let mut req = self.client.post(&self.config.endpoint_url).json(body);
        if let Some(key) = secret {
            req = req.bearer_auth(key);
        }
        let resp = {
            let _permit = self.in_flight.acquire(self.config.max_in_flight);
            req.send().and_then(|r| {
                let status = r.status();
                r.text().map(|t| (status, t))
            })
        };
        let (status, text) = match resp {
            Ok(v) => v,
            Err(e) if e.is_timeout() => return Err(Attempt::Retry(PolicyUnavailable::Timeout { attempts })),
            Err(e) => {
                let cause = redact(&e.to_string(), secret);
                return Err(Attempt::Retry(PolicyUnavailable::Transport { attempts, cause }));
            }
        };
        if !status.is_success() {
            let err = PolicyUnavailable::Http { status: status.as_u16(), attempts, body: redact(&text, secret) };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(PolicyUnavailable::Malformed(redact(&e.to_string(), secret))))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal(PolicyUnavailable::Malformed("no choices[0].message.content".into())))?;
        Ok(PolicyResponse {
            raw_text: redact(&content, secret),
            latency: 0.0,
            token_usage: parsed.usage.map(|u| TokenUsage { input: u.prompt_tokens, output: u.completion_tokens }),
            max_output_tokens: Some(body.max_tokens),
        })
    }

    /// One chat completion with retries and exponential backoff.
    pub fn complete(&self, prompt: &PromptBundle, codec: &LineCodec) -> Result<PolicyResponse, PolicyUnavailable> {
        check_prompt(prompt)?;
        let started = Instant::now();
        let mut messages = Vec::with_capacity(2);
        if self.config.split_system {
            if !prompt.system_text.is_empty() {
                messages.push(ChatMessage { role: "system", content: &prompt.system_text });
            }
            messages.push(ChatMessage { role: "user", content: &prompt.user_text });
        } else {
            messages.push(ChatMessage { role: "user", content: &prompt.text });
        }
        let body = ChatRequest {
            model: &self.config.model_name,
            messages,
            temperature: self.config.temperature,
            max_tokens: expected_output_tokens(codec) * self.config.output_token_factor.max(1),
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body, attempts) {
                Ok(mut r) => {
                    r.latency = started.elapsed().as_secs_f64();
                    return Ok(r);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempts > self.config.max_retries => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!("attempt {attempts} failed ({e}); retrying");
                    std::thread::sleep(self.config.backoff(attempts - 1));
                }
            }
        }
    }
}

impl TextPolicy for RemotePolicy {
    fn name(&self) -> &str {
        "remote"
    }

    fn decide(&mut self, prompt: &PromptBundle, ctx: &StepContext<'_>) -> Result<PolicyResponse, PolicyUnavailable> {
        self.complete(prompt, ctx.codec)
    }

    fn is_deterministic(&self) -> bool {
        self.config.temperature == 0.0
    }

    fn secret(&self) -> Option<String> {
        self.api_key.clone()
    }
}
