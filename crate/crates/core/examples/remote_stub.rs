//! Runs the remote chat-completion policy against the bundled stub server.
//! The key is read from the environment and never written to disk.

use llmwalk::harness::{run_experiment, ExperimentConfig, PolicyKind};
use llmwalk::policy::stub::{pattern_reply, StubServer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = StubServer::start(Box::new(pattern_reply))?;
    let mut cfg = ExperimentConfig { trials: 2, episode_length: 3.0, history_length: 20, ..ExperimentConfig::default() };
    cfg.policy.kind = PolicyKind::Remote;
    cfg.llm.endpoint_url = server.url();
    if std::env::var_os("OPENAI_API_KEY").is_none() {
        cfg.llm.api_key_env = None;
    }
    let out = std::env::temp_dir().join("llmwalk_remote_example");
    let s = run_experiment(&cfg, Some(&out))?;
    for r in &s.trials {
        println!("trial {}: NWT {:.3}, {} input / {} output tokens", r.trial, r.normalized_walking_time, r.input_tokens, r.output_tokens);
    }
    let first = &server.requests()[0];
    println!("{} requests; first body starts {}", server.request_count(), &first.body[..first.body.len().min(120)]);
    println!("transcripts in {}", out.display());
    Ok(())
}
