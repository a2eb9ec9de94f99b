//! Penalty ground contact: spring-damper normal force plus an anchored
//! tangential spring capped by Coulomb friction.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::terrain::Terrain;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Normal and tangential spring stiffness (N/m).
    pub stiffness: f64,
    /// Normal and tangential damping (N·s/m).
    pub damping: f64,
    pub friction: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { stiffness: 20_000.0, damping: 200.0, friction: 0.8 }
    }
}

/// Force on one contact point, split into its normal and tangential parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactForce {
    pub normal: f64,
    pub tangential: f64,
    /// World-frame force vector (x, z).
    pub force: Vector2<f64>,
    pub active: bool,
}

impl ContactForce {
    pub const NONE: ContactForce =
        ContactForce { normal: 0.0, tangential: 0.0, force: Vector2::new(0.0, 0.0), active: false };
}

/// Evaluates the contact force at `point` moving with `vel`.
///
/// `anchor` is the x coordinate where the point last stuck to the ground;
/// it is updated in place (cleared on lift-off, dragged along when slipping).
pub fn contact_force(
    params: &ContactParams,
    terrain: &Terrain,
    point: Vector2<f64>,
    vel: Vector2<f64>,
    anchor: &mut Option<f64>,
) -> ContactForce {
    let slope = terrain.slope(point.x);
    let scale = (1.0 + slope * slope).sqrt();
    let normal_dir = Vector2::new(-slope, 1.0) / scale;
    let tangent_dir = Vector2::new(1.0, slope) / scale;
    let depth = (terrain.height(point.x) - point.y) * normal_dir.y;
    if depth <= 0.0 {
        *anchor = None;
        return ContactForce::NONE;
    }
    let vn = vel.dot(&normal_dir);
    let normal = (params.stiffness * depth - params.damping * vn).max(0.0);

    let a = *anchor.get_or_insert(point.x);
    let slip = (point.x - a) * scale;
    let vt = vel.dot(&tangent_dir);
    let mut tangential = -params.stiffness * slip - params.damping * vt;
    let cap = params.friction * normal;
    if tangential.abs() > cap {
        tangential = cap.copysign(tangential);
        // Re-anchor so the spring alone would supply the capped force.
        *anchor = Some(point.x + tangential / params.stiffness / scale);
    }
    ContactForce {
        normal,
        tangential,
        force: normal_dir * normal + tangent_dir * tangential,
        active: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_force_above_ground() {
        let mut anchor = Some(0.3);
        let f = contact_force(
            &ContactParams::default(),
            &Terrain::flat(),
            Vector2::new(0.0, 0.001),
            Vector2::new(0.5, -1.0),
            &mut anchor,
        );
        assert_eq!(f, ContactForce::NONE);
        assert_eq!(anchor, None);
    }

    #[test]
    fn static_penetration_gives_spring_force() {
        let mut anchor = None;
        let f = contact_force(
            &ContactParams::default(),
            &Terrain::flat(),
            Vector2::new(0.0, -0.001),
            Vector2::zeros(),
            &mut anchor,
        );
        assert!((f.normal - 20.0).abs() < 1e-9);
        assert_eq!(f.tangential, 0.0);
        assert_eq!(anchor, Some(0.0));
    }

    #[test]
    fn friction_is_capped() {
        let params = ContactParams::default();
        let mut anchor = Some(0.0);
        let f = contact_force(
            &params,
            &Terrain::flat(),
            Vector2::new(0.05, -0.001),
            Vector2::new(1.0, 0.0),
            &mut anchor,
        );
        assert!(f.normal > 0.0);
        assert!((f.tangential.abs() - params.friction * f.normal).abs() < 1e-9);
        assert!(f.tangential < 0.0);
        // Anchor moved toward the point.
        assert!(anchor.unwrap() > 0.0 && anchor.unwrap() < 0.05);
    }
}
