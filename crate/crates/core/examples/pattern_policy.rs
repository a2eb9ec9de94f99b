//! Compares a pure in-context pattern matcher against a fixed response.
//! The matcher only sees the prompt text; it knows nothing about robots.

use llmwalk::harness::{run_experiment, ExperimentConfig, PolicyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (kind, text) in [(PolicyKind::NnPattern, None), (PolicyKind::Constant, Some("0 0 0 0 0 0 0 0"))] {
        let mut cfg = ExperimentConfig { write_transcripts: false, ..ExperimentConfig::default() };
        cfg.policy.kind = kind;
        cfg.policy.constant_text = text.map(String::from);
        let s = run_experiment(&cfg, None)?;
        println!(
            "{:<10} NWT {:.3}  success {:.2}  mean prompt {:.0} tokens",
            format!("{kind:?}"),
            s.mean_nwt,
            s.success_rate,
            s.mean_prompt_tokens
        );
    }
    Ok(())
}
