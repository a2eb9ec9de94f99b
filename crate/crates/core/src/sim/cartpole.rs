//! Cart on a rail with a passive uniform pole.
//!
//! The pole angle is stored in `SimState::base_pitch` (counter-clockwise,
//! zero upright) and its rate in `base_ang_vel`; `base_pos` tracks the pole
//! centre of mass, so the generic fall test and observation code apply.

use crate::model::RobotModel;

use super::SimState;

#[derive(Clone, Copy, Debug)]
pub(crate) struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Pivot to pole centre of mass.
    pub com: f64,
    pub pole_inertia_com: f64,
}

impl CartpoleParams {
    pub fn from_model(model: &RobotModel) -> Self {
        let com = model.link_lengths[1];
        let pole_mass = model.link_masses[1];
        let length = 2.0 * com;
        Self {
            cart_mass: model.link_masses[0],
            pole_mass,
            com,
            pole_inertia_com: pole_mass * length * length / 12.0,
        }
    }

    fn pole_inertia_pivot(&self) -> f64 {
        self.pole_mass * self.com * self.com + self.pole_inertia_com
    }

    /// Cart and pole accelerations for force `force` on the cart.
    pub fn accelerations(&self, theta: f64, theta_dot: f64, force: f64, gravity: f64) -> (f64, f64) {
        let (s, c) = theta.sin_cos();
        let ml = self.pole_mass * self.com;
        // [ M+m     -ml c ] [xdd]   [ F - ml s thd^2 ]
        // [ -ml c    J    ] [thdd] = [ m g l s        ]
        let a11 = self.cart_mass + self.pole_mass;
        let a12 = -ml * c;
        let a22 = self.pole_inertia_pivot();
        let b1 = force - ml * s * theta_dot * theta_dot;
        let b2 = ml * gravity * s;
        let det = a11 * a22 - a12 * a12;
        let xdd = (b1 * a22 - a12 * b2) / det;
        let thdd = (a11 * b2 - a12 * b1) / det;
        (xdd, thdd)
    }

    /// Total mechanical energy with potential zero at the pivot height.
    pub fn energy(&self, x_dot: f64, theta: f64, theta_dot: f64, gravity: f64) -> f64 {
        let (_, c) = theta.sin_cos();
        let ml = self.pole_mass * self.com;
        0.5 * (self.cart_mass + self.pole_mass) * x_dot * x_dot - ml * c * x_dot * theta_dot
            + 0.5 * self.pole_inertia_pivot() * theta_dot * theta_dot
            + ml * gravity * c
    }
}

pub(crate) fn sync_base(params: &CartpoleParams, state: &mut SimState) {
    let (s, c) = state.base_pitch.sin_cos();
    let x = state.q[0];
    let xd = state.qd[0];
    let w = state.base_ang_vel;
    state.base_pos = [x - params.com * s, params.com * c];
    state.base_lin_vel = [xd - params.com * c * w, -params.com * s * w];
}

pub(crate) fn step(
    params: &CartpoleParams,
    state: &SimState,
    force: f64,
    gravity: f64,
    dt: f64,
) -> SimState {
    let (xdd, thdd) = params.accelerations(state.base_pitch, state.base_ang_vel, force, gravity);
    let mut next = state.clone();
    next.qd[0] += dt * xdd;
    next.base_ang_vel += dt * thdd;
    next.q[0] += dt * next.qd[0];
    next.base_pitch += dt * next.base_ang_vel;
    sync_base(params, &mut next);
    next
}
