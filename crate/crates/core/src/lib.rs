//! Control stack for planar collaborative object manipulation.
//!
//! A team of planar agents pushes a rigid object whose mass, inertia, COM
//! location, and ground friction are unknown to the controllers. The stack
//! has three levels:
//!
//! 1. [`adaptive`] — an object-level adaptive controller that outputs the
//!    net wrench required to track a desired pose trajectory, together with
//!    a PD baseline.
//! 2. [`allocation`] — a QP-based distributor that splits the commanded
//!    wrench into per-agent push-only contact forces and slide positions,
//!    plus the open-loop heuristic baseline.
//! 3. [`mpc`] — a decentralized per-agent MPC that realizes the assigned
//!    manipulation force through ground-reaction inputs while respecting
//!    traction limits.
//!
//! [`dynamics`] provides the ground-truth simulation model the controllers
//! are tested against, and [`qp`] the small dense convex QP solver used by
//! levels 2 and 3.

pub mod adaptive;
pub mod allocation;
pub mod dynamics;
pub mod mpc;
pub mod qp;

/// Wrap an angle to the half-open interval `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let r = (a + PI).rem_euclid(TAU);
    if r == 0.0 {
        PI
    } else {
        r - PI
    }
}
