//! Prints the prompt a text policy sees at the first decision of an episode.
//!
//! `cargo run --example prompt_preview -- td io` keeps only the listed sections.

use llmwalk::gait::collect_rollout;
use llmwalk::harness::{trial_env, trial_seeds, ExperimentConfig};
use llmwalk::gait::default_controller;
use llmwalk::prompt::{build_prompt, default_sections, HistoryBuffer, SectionKind, SectionTemplates};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig { history_length: 5, ..ExperimentConfig::default() };
    let model = cfg.robot_model()?;
    let layout = cfg.layout(&model)?;
    let codec = cfg.codec(&model)?;
    let mut sections = default_sections(&model, &layout, &cfg.timing, &cfg.gains, &codec, &SectionTemplates::default());
    let only: Vec<SectionKind> = std::env::args().skip(1).map(|a| SectionKind::parse(&a)).collect::<Result<_, _>>()?;
    if !only.is_empty() {
        sections = sections.with_only(&only);
    }

    let mut env = trial_env(&cfg, &model, trial_seeds(cfg.master_seed, 1)[0])?;
    let mut ctl = default_controller(&model, &cfg.gait, cfg.gains.kp, cfg.gains.kd);
    let traj = collect_rollout(&mut env, ctl.as_mut(), cfg.history_length)?;
    let mut history = HistoryBuffer::new(cfg.history_length, layout.total_dim(), model.n_joints());
    for (o, a) in traj.pairs {
        history.push(o, a)?;
    }
    let prompt = build_prompt(&sections, &history, &env.observe()?, &codec)?;
    print!("{}", prompt.text);
    eprintln!("-- {} estimated tokens, config {}", prompt.estimated_tokens, &prompt.config_hash[..12]);
    Ok(())
}
