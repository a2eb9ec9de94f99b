//! Runs the scripted controller through the full text path: every action is
//! encoded, parsed back and executed. Any harness bug shows up as NWT < 1.

use llmwalk::harness::{run_experiment, ExperimentConfig, PolicyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    cfg.policy.kind = PolicyKind::Oracle;
    cfg.write_transcripts = false;
    let summary = run_experiment(&cfg, None)?;
    for r in &summary.trials {
        println!(
            "trial {}  seed {:>20}  NWT {:.3}  {:>9}  x = {:.2} m",
            r.trial,
            r.seed,
            r.normalized_walking_time,
            r.termination.tag(),
            r.distance
        );
    }
    println!("mean NWT {:.3}, success rate {:.2}", summary.mean_nwt, summary.success_rate);
    Ok(())
}
