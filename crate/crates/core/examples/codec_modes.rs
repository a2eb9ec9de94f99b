//! Shows one observation and action under every normalization mode.

use llmwalk::codec::{LineCodec, NormalizationMode};
use llmwalk::model::{action_ranges, planar_layout, planar_quadruped_model, ObservationLayout, SegmentKind};
use llmwalk::sim::World;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = planar_quadruped_model();
    let layout: ObservationLayout = planar_layout(&model).subset(&[SegmentKind::BaseLinVel, SegmentKind::BaseAngVel]);
    let world = World::new(model.clone())?;
    let mut state = world.initial_state();
    state.base_lin_vel = [0.42, -0.05];
    state.base_ang_vel = -0.5321;
    let obs = world.observe(&state, &layout)?;
    let act = llmwalk::sim::Action(model.default_pose.clone());

    for mode in NormalizationMode::ALL {
        let codec = LineCodec::new(mode, layout.ranges(), action_ranges(&model), 200)?;
        let line = codec.encode_pair(&obs, &act)?;
        let (o, _) = codec.decode_pair(&line)?;
        println!("{:<22} {line}", mode.as_str());
        println!("{:<22} decoded obs {:?}", "", o.0);
    }
    Ok(())
}
