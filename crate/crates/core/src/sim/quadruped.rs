//! Planar floating-base quadruped dynamics in reduced coordinates.
//!
//! Generalized coordinates are `[x, z, pitch, hip_0, knee_0, ..]`. The
//! equations of motion `M(q) q̈ + h(q, q̇) = τ + Σ Jᵀ f` are assembled per
//! body from point Jacobians (Kane's form) and solved with a Cholesky
//! factorization each physics step.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::model::RobotModel;

use super::contact::{contact_force, ContactForce, ContactParams};
use super::terrain::Terrain;
use super::SimState;

type V2 = Vector2<f64>;

const BASE_DOF: usize = 3;
const LIMIT_STIFFNESS: f64 = 50.0;
const LIMIT_DAMPING: f64 = 1.0;
/// Leg joints turn clockwise in the x–z plane: positive hip swings the foot
/// backward, negative knee folds the shank forward (knee points back).
const JOINT_SIGN: f64 = -1.0;

#[derive(Clone, Debug)]
struct Leg {
    hip_offset: f64,
    thigh: f64,
    shank: f64,
    thigh_mass: f64,
    shank_mass: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct Quadruped {
    torso_mass: f64,
    torso_inertia: f64,
    torso_half_length: f64,
    legs: Vec<Leg>,
    armature: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Which part of a leg a point sits on, and how far along it.
#[derive(Clone, Copy, Debug)]
enum Attach {
    Torso(f64),
    Thigh { leg: usize, frac: f64 },
    Shank { leg: usize, frac: f64 },
}

/// Position, sparse Jacobian and velocity-product acceleration of a point.
struct PointKin {
    pos: V2,
    vel: V2,
    jac: Vec<(usize, V2)>,
    bias: V2,
}

fn dir(angle: f64) -> V2 {
    V2::new(angle.sin(), -angle.cos())
}

fn perp(v: V2) -> V2 {
    V2::new(-v.y, v.x)
}

impl Quadruped {
    pub fn from_model(model: &RobotModel) -> Self {
        let n_legs = model.n_legs();
        let torso_len = model.link_lengths[0];
        let legs = (0..n_legs)
            .map(|l| Leg {
                hip_offset: if l < n_legs / 2 { 0.5 * torso_len } else { -0.5 * torso_len },
                thigh: model.link_lengths[1 + 2 * l],
                shank: model.link_lengths[2 + 2 * l],
                thigh_mass: model.link_masses[1 + 2 * l],
                shank_mass: model.link_masses[2 + 2 * l],
            })
            .collect();
        Self {
            torso_mass: model.link_masses[0],
            torso_inertia: model.link_masses[0] * torso_len * torso_len / 12.0,
            torso_half_length: 0.5 * torso_len,
            legs,
            armature: model.armature,
            lower: model.joint_lower.clone(),
            upper: model.joint_upper.clone(),
        }
    }

    pub fn dof(&self) -> usize {
        BASE_DOF + 2 * self.legs.len()
    }

    /// Feet, then knees, then torso front and rear.
    fn contact_points(&self) -> Vec<Attach> {
        let n = self.legs.len();
        let mut pts: Vec<Attach> = (0..n).map(|leg| Attach::Shank { leg, frac: 1.0 }).collect();
        pts.extend((0..n).map(|leg| Attach::Thigh { leg, frac: 1.0 }));
        pts.push(Attach::Torso(self.torso_half_length));
        pts.push(Attach::Torso(-self.torso_half_length));
        pts
    }

    pub fn n_contact_points(&self) -> usize {
        2 * self.legs.len() + 2
    }

    fn point(&self, s: &SimState, at: Attach) -> PointKin {
        let base = V2::new(s.base_pos[0], s.base_pos[1]);
        let base_vel = V2::new(s.base_lin_vel[0], s.base_lin_vel[1]);
        let (sn, cs) = s.base_pitch.sin_cos();
        let rot = |x: f64| V2::new(cs * x, sn * x);
        let w0 = s.base_ang_vel;

        let (offset, thigh, shank) = match at {
            Attach::Torso(x) => (rot(x), None, None),
            Attach::Thigh { leg, frac } => (rot(self.legs[leg].hip_offset), Some((leg, frac)), None),
            Attach::Shank { leg, frac } => {
                (rot(self.legs[leg].hip_offset), Some((leg, 1.0)), Some((leg, frac)))
            }
        };

        let mut v1 = V2::zeros();
        let mut v2 = V2::zeros();
        let mut w1 = 0.0;
        let mut w2 = 0.0;
        let mut hip_col = None;
        let mut knee_col = None;
        if let Some((leg, frac)) = thigh {
            let qi = 2 * leg;
            let a1 = s.base_pitch + JOINT_SIGN * s.q[qi];
            w1 = w0 + JOINT_SIGN * s.qd[qi];
            v1 = dir(a1) * (self.legs[leg].thigh * frac);
            hip_col = Some(BASE_DOF + qi);
            if let Some((_, frac2)) = shank {
                let a2 = a1 + JOINT_SIGN * s.q[qi + 1];
                w2 = w1 + JOINT_SIGN * s.qd[qi + 1];
                v2 = dir(a2) * (self.legs[leg].shank * frac2);
                knee_col = Some(BASE_DOF + qi + 1);
            }
        }

        let mut jac = vec![(0, V2::new(1.0, 0.0)), (1, V2::new(0.0, 1.0)), (2, perp(offset + v1 + v2))];
        if let Some(c) = hip_col {
            jac.push((c, perp(v1 + v2) * JOINT_SIGN));
        }
        if let Some(c) = knee_col {
            jac.push((c, perp(v2) * JOINT_SIGN));
        }
        let vel = base_vel + perp(offset) * w0 + perp(v1) * w1 + perp(v2) * w2;
        let bias = -(offset * (w0 * w0) + v1 * (w1 * w1) + v2 * (w2 * w2));
        PointKin { pos: base + offset + v1 + v2, vel, jac, bias }
    }

    /// Bodies as (attachment of centre of mass, mass, rotational inertia,
    /// angular Jacobian as (column, coefficient)).
    fn bodies(&self) -> Vec<(Attach, f64, f64, Vec<(usize, f64)>)> {
        let mut out = vec![(Attach::Torso(0.0), self.torso_mass, self.torso_inertia, vec![(2, 1.0)])];
        for (l, leg) in self.legs.iter().enumerate() {
            let hip = BASE_DOF + 2 * l;
            out.push((
                Attach::Thigh { leg: l, frac: 0.5 },
                leg.thigh_mass,
                leg.thigh_mass * leg.thigh * leg.thigh / 12.0,
                vec![(2, 1.0), (hip, JOINT_SIGN)],
            ));
            out.push((
                Attach::Shank { leg: l, frac: 0.5 },
                leg.shank_mass,
                leg.shank_mass * leg.shank * leg.shank / 12.0,
                vec![(2, 1.0), (hip, JOINT_SIGN), (hip + 1, JOINT_SIGN)],
            ));
        }
        out
    }

    pub fn foot_positions(&self, s: &SimState) -> Vec<V2> {
        (0..self.legs.len())
            .map(|leg| self.point(s, Attach::Shank { leg, frac: 1.0 }).pos)
            .collect()
    }

    /// Contact forces at the current state; anchors are updated in place.
    pub fn contact_forces(
        &self,
        s: &SimState,
        params: &ContactParams,
        terrain: &Terrain,
        anchors: &mut [Option<f64>],
    ) -> Vec<(ContactForce, Vec<(usize, V2)>)> {
        self.contact_points()
            .into_iter()
            .zip(anchors.iter_mut())
            .map(|(at, anchor)| {
                let k = self.point(s, at);
                (contact_force(params, terrain, k.pos, k.vel, anchor), k.jac)
            })
            .collect()
    }

    /// Generalized accelerations for the given joint torques. Returns the
    /// accelerations, the updated contact anchors and the contact forces.
    pub fn accelerations(
        &self,
        s: &SimState,
        torques: &[f64],
        params: &ContactParams,
        terrain: &Terrain,
        gravity: f64,
    ) -> Option<(DVector<f64>, Vec<Option<f64>>, Vec<ContactForce>)> {
        let n = self.dof();
        let mut mass = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);

        for (at, m, inertia, ang_cols) in self.bodies() {
            let k = self.point(s, at);
            let weight = V2::new(0.0, -m * gravity);
            for &(i, ji) in &k.jac {
                for &(j, jj) in &k.jac {
                    mass[(i, j)] += m * ji.dot(&jj);
                }
                rhs[i] += ji.dot(&weight) - m * ji.dot(&k.bias);
            }
            for &(i, ci) in &ang_cols {
                for &(j, cj) in &ang_cols {
                    mass[(i, j)] += inertia * ci * cj;
                }
            }
        }

        for j in 0..2 * self.legs.len() {
            let c = BASE_DOF + j;
            mass[(c, c)] += self.armature;
            let q = s.q[j];
            let limit = if q > self.upper[j] {
                -LIMIT_STIFFNESS * (q - self.upper[j]) - LIMIT_DAMPING * s.qd[j]
            } else if q < self.lower[j] {
                -LIMIT_STIFFNESS * (q - self.lower[j]) - LIMIT_DAMPING * s.qd[j]
            } else {
                0.0
            };
            rhs[c] += torques[j] + limit;
        }

        let mut anchors = s.contact_anchors.clone();
        let contacts = self.contact_forces(s, params, terrain, &mut anchors);
        let mut forces = Vec::with_capacity(contacts.len());
        for (f, jac) in contacts {
            if f.active {
                for &(i, ji) in &jac {
                    rhs[i] += ji.dot(&f.force);
                }
            }
            forces.push(f);
        }

        let qdd = mass.cholesky()?.solve(&rhs);
        Some((qdd, anchors, forces))
    }

    /// Semi-implicit Euler step. `None` when the mass matrix is singular.
    pub fn step(
        &self,
        s: &SimState,
        torques: &[f64],
        params: &ContactParams,
        terrain: &Terrain,
        gravity: f64,
        dt: f64,
    ) -> Option<SimState> {
        let (qdd, anchors, forces) = self.accelerations(s, torques, params, terrain, gravity)?;
        let mut next = s.clone();
        next.base_lin_vel[0] += dt * qdd[0];
        next.base_lin_vel[1] += dt * qdd[1];
        next.base_ang_vel += dt * qdd[2];
        next.base_pos[0] += dt * next.base_lin_vel[0];
        next.base_pos[1] += dt * next.base_lin_vel[1];
        next.base_pitch += dt * next.base_ang_vel;
        for j in 0..next.q.len() {
            next.qd[j] += dt * qdd[BASE_DOF + j];
            next.q[j] += dt * next.qd[j];
            let lo = self.lower[j] - super::HARD_LIMIT_MARGIN;
            let hi = self.upper[j] + super::HARD_LIMIT_MARGIN;
            if next.q[j] < lo {
                next.q[j] = lo;
                next.qd[j] = next.qd[j].max(0.0);
            } else if next.q[j] > hi {
                next.q[j] = hi;
                next.qd[j] = next.qd[j].min(0.0);
            }
        }
        next.contact_anchors = anchors;
        for (leg, f) in forces.iter().take(self.legs.len()).enumerate() {
            next.foot_contacts[leg] = f.active;
        }
        Some(next)
    }

    /// Kinetic plus gravitational potential energy (contacts excluded).
    pub fn mechanical_energy(&self, s: &SimState, gravity: f64) -> f64 {
        let mut e = 0.0;
        for (at, m, inertia, ang_cols) in self.bodies() {
            let k = self.point(s, at);
            let omega: f64 = ang_cols
                .iter()
                .map(|&(c, k)| k * if c == 2 { s.base_ang_vel } else { s.qd[c - BASE_DOF] })
                .sum();
            e += 0.5 * m * k.vel.norm_squared() + 0.5 * inertia * omega * omega + m * gravity * k.pos.y;
        }
        let joint_ke: f64 = s.qd.iter().map(|w| 0.5 * self.armature * w * w).sum();
        e + joint_ke
    }
}
