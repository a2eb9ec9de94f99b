//! Balances the cartpole with the state-feedback controller, then lets the
//! pole fall freely and reports energy drift of the integrator.

use llmwalk::gait::{collect_rollout, CartpoleBalancer};
use llmwalk::model::{cartpole_model, default_layout, PdGains, TimingConfig};
use llmwalk::sim::{Env, World};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = cartpole_model();
    let mut env = Env::new(World::new(model.clone())?, default_layout(&model), PdGains::default(), TimingConfig::default());
    env.state.base_pitch = 0.1;
    let traj = collect_rollout(&mut env, &mut CartpoleBalancer::new(20.0, 0.5), 100)?;
    println!(
        "balanced {:.1} s: cart x = {:.3} m, pole angle = {:.4} rad",
        traj.duration(),
        env.state.q[0],
        env.state.base_pitch
    );

    let world = World::new(model)?;
    let mut s = world.initial_state();
    s.base_pitch = 0.3;
    let e0 = world.mechanical_energy(&s);
    for step in 1..=5000 {
        s = world.step_physics(&s, &[0.0], 1e-3)?;
        if step % 1000 == 0 {
            let e = world.mechanical_energy(&s);
            println!("t = {:.1} s  pole = {:+.3} rad  energy drift = {:+.4}%", s.sim_time, s.base_pitch, 100.0 * (e - e0) / e0.abs());
        }
    }
    Ok(())
}
