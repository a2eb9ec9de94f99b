//! Sweeps one ablation suite and writes its CSV and SVG chart.
//!
//! `cargo run --release --example ablation_sweep -- description`

use std::path::PathBuf;

use llmwalk::harness::{run_ablation_suite, ExperimentConfig, PolicyKind, Suite};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = Suite::parse(&std::env::args().nth(1).unwrap_or_else(|| "history_length".into()))?;
    let mut cfg = ExperimentConfig { trials: 2, episode_length: 5.0, ..ExperimentConfig::default() };
    cfg.policy.kind = PolicyKind::NnPattern;
    let out = PathBuf::from("runs/ablation_example");
    let report = run_ablation_suite(suite, &cfg, Some(&out))?;
    print!("{}", report.csv_string()?);
    println!("wrote {}", out.display());
    Ok(())
}
