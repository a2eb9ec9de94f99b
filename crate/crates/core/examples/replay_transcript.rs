//! Records one episode, replays its transcript and plots the joint targets.

use llmwalk::harness::plot::transcript_chart;
use llmwalk::harness::{read_transcript, replay_transcript, run_experiment, ExperimentConfig, PolicyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("llmwalk_replay_example");
    let mut cfg = ExperimentConfig { trials: 1, episode_length: 4.0, ..ExperimentConfig::default() };
    cfg.policy.kind = PolicyKind::NnPattern;
    run_experiment(&cfg, Some(&dir))?;

    let path = dir.join("trial_00.jsonl");
    let report = replay_transcript(&path, None)?;
    let original = report.original.result.as_ref().map_or(f64::NAN, |r| r.normalized_walking_time);
    println!(
        "original NWT {original:.3}, replayed NWT {:.3}, identical: {}",
        report.replayed.normalized_walking_time, report.identical
    );
    let svg = dir.join("trial_00.svg");
    std::fs::write(&svg, transcript_chart(&read_transcript(&path)?))?;
    println!("plot: {}", svg.display());
    Ok(())
}
