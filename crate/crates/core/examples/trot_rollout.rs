//! Drives the planar quadruped with the scripted trot and writes the rollout
//! in line format, then reads it back.

use std::io::BufReader;

use llmwalk::codec::{LineCodec, NormalizationMode};
use llmwalk::gait::{collect_rollout, ScriptedGait, GaitParams, Trajectory};
use llmwalk::model::{action_ranges, planar_layout, planar_quadruped_model, PdGains, TimingConfig};
use llmwalk::sim::{Env, World};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = planar_quadruped_model();
    let layout = planar_layout(&model);
    let mut env = Env::new(World::new(model.clone())?, layout.clone(), PdGains::default(), TimingConfig::default());
    let traj = collect_rollout(&mut env, &mut ScriptedGait::new(GaitParams::default()), 100)?;
    println!("walked {:.2} m in {:.1} s", env.state.base_pos[0], traj.duration());

    let codec = LineCodec::new(NormalizationMode::PositiveInt, layout.ranges(), action_ranges(&model), 200)?;
    let mut bytes = Vec::new();
    traj.write_records(&codec, &mut bytes)?;
    let text = String::from_utf8(bytes)?;
    for line in text.lines().take(4) {
        println!("{line}");
    }

    let (back, _) = Trajectory::read_records(BufReader::new(text.as_bytes()))?;
    println!("read back {} pairs", back.len());
    Ok(())
}
