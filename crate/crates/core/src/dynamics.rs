//! Ground-truth planar rigid-body model of the manipulated object.
//!
//! The object's pose is measured at an arbitrary body-fixed reference point
//! `p`, not at the (unknown) center of mass. The generalized coordinates are
//! `q = [x_p, y_p, theta]`, and the equation of motion about `p` is
//!
//! ```text
//! H(q) q_ddot + C(q, q_dot) q_dot = tau + f_k
//! ```
//!
//! with `tau` the wrench the agents apply at `p` and `f_k` the ground
//! friction wrench acting on the object. Friction is isotropic Coulomb
//! evaluated at the COM with an effective-radius rotational term and true
//! stick below the static caps.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::wrap_angle;

/// Velocity threshold separating the static and kinetic friction regimes, m/s.
pub const V_EPS: f64 = 1e-3;
/// Yaw-rate threshold for the rotational friction regime, rad/s.
pub const OMEGA_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid object parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite acceleration during step (tau = {0:?})")]
    NonFiniteAcceleration(Wrench),
    #[error("mass matrix not positive definite")]
    NotPositiveDefinite,
}

/// Planar pose and twist of the object, measured at the reference point `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectState {
    /// World position of the reference point, m.
    pub x_p: Vector2<f64>,
    /// Yaw, rad, wrapped to `(-pi, pi]`.
    pub theta: f64,
    /// World velocity of the reference point, m/s.
    pub v_p: Vector2<f64>,
    /// Yaw rate, rad/s.
    pub omega: f64,
}

impl ObjectState {
    pub fn at_rest(x_p: Vector2<f64>, theta: f64) -> Self {
        Self {
            x_p,
            theta,
            v_p: Vector2::zeros(),
            omega: 0.0,
        }
    }

    /// Generalized velocity `[v_x, v_y, omega]`.
    pub fn qdot(&self) -> Vector3<f64> {
        Vector3::new(self.v_p.x, self.v_p.y, self.omega)
    }

    /// World velocity of the center of mass for the inertia offset `r_p`.
    ///
    /// The COM sits at `x_p - R r_p` (see [`ObjectParams::r_p`]), so its
    /// velocity is `v_p - omega * perp(R r_p)`.
    pub fn com_velocity(&self, r_p: Vector2<f64>) -> Vector2<f64> {
        self.v_p - self.omega * perp(rot2(self.theta) * r_p)
    }

    /// World position of the center of mass for the inertia offset `r_p`.
    pub fn com_position(&self, r_p: Vector2<f64>) -> Vector2<f64> {
        self.x_p - rot2(self.theta) * r_p
    }

    pub fn is_finite(&self) -> bool {
        self.x_p.iter().all(|v| v.is_finite())
            && self.v_p.iter().all(|v| v.is_finite())
            && self.theta.is_finite()
            && self.omega.is_finite()
    }
}

/// Piecewise-constant friction coefficient keyed on world x.
///
/// Zones are half-open intervals: the coefficient at `x` is the one of the
/// right-most zone whose start is `<= x`, falling back to the default.
#[derive(Clone, Debug, PartialEq)]
pub struct FrictionMap {
    default_mu: f64,
    /// `(x_from, mu)` pairs, kept sorted by `x_from`.
    zones: Vec<(f64, f64)>,
}

impl FrictionMap {
    pub fn uniform(mu: f64) -> Self {
        Self {
            default_mu: mu,
            zones: Vec::new(),
        }
    }

    /// Add (or replace) a zone starting at `x_from`.
    pub fn add_zone(&mut self, x_from: f64, mu: f64) {
        self.zones.retain(|&(x, _)| x != x_from);
        self.zones.push((x_from, mu));
        self.zones.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    pub fn mu_at(&self, x: f64) -> f64 {
        self.zones
            .iter()
            .rev()
            .find(|&&(x_from, _)| x >= x_from)
            .map(|&(_, mu)| mu)
            .unwrap_or(self.default_mu)
    }
}

/// Ground-truth physical parameters of the object. Hidden from controllers.
#[derive(Clone, Debug)]
pub struct ObjectParams {
    /// Mass, kg.
    pub mass: f64,
    /// Yaw inertia about the COM, kg m^2.
    pub inertia_com: f64,
    /// COM offset parameter of the generalized mass matrix, body frame, m.
    ///
    /// This is the offset between the reference point and the COM as it
    /// enters `H(q)`; the world COM position is `x_p - R r_p`. A nonzero
    /// value makes the object dynamically asymmetric about `p`.
    pub r_p: Vector2<f64>,
    /// Rectangle half-sizes (body x, body y), m. Contacts live on the faces.
    pub half_extents: Vector2<f64>,
    /// Terrain friction coefficient, piecewise by world-x zone.
    pub mu: FrictionMap,
    /// Effective radius converting normal load to rotational friction, m.
    pub rho_eff: f64,
    /// Gravity, m/s^2.
    pub gravity: f64,
}

impl ObjectParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.mass > 0.0) {
            return Err(DynamicsError::InvalidParams("mass must be > 0".into()));
        }
        if !(self.inertia_com > 0.0) {
            return Err(DynamicsError::InvalidParams("inertia must be > 0".into()));
        }
        if self.mu_values().iter().any(|&m| !(m >= 0.0)) {
            return Err(DynamicsError::InvalidParams("mu must be >= 0".into()));
        }
        if !(self.rho_eff >= 0.0) {
            return Err(DynamicsError::InvalidParams("rho_eff must be >= 0".into()));
        }
        if !(self.inertia_p() > 0.0) {
            return Err(DynamicsError::InvalidParams("I_pzz must be > 0".into()));
        }
        Ok(())
    }

    fn mu_values(&self) -> Vec<f64> {
        let mut v = vec![self.mu.default_mu];
        v.extend(self.mu.zones.iter().map(|&(_, m)| m));
        v
    }

    /// Yaw inertia about the reference point `p` (planar parallel axis).
    pub fn inertia_p(&self) -> f64 {
        self.inertia_com + self.mass * self.r_p.norm_squared()
    }

    /// The linear parameter vector `[m, m r_x, m r_y, I_pzz]` the adaptive
    /// controller estimates.
    pub fn theta_true(&self) -> nalgebra::Vector4<f64> {
        nalgebra::Vector4::new(
            self.mass,
            self.mass * self.r_p.x,
            self.mass * self.r_p.y,
            self.inertia_p(),
        )
    }

    /// Friction coefficient under the object's COM.
    pub fn mu_at_com(&self, state: &ObjectState) -> f64 {
        self.mu.mu_at(state.com_position(self.r_p).x)
    }
}

/// Planar wrench: world-frame force and yaw moment about `p`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Wrench {
    pub f: Vector2<f64>,
    pub m: f64,
}

impl Wrench {
    pub fn new(fx: f64, fy: f64, m: f64) -> Self {
        Self {
            f: Vector2::new(fx, fy),
            m,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.f.x, self.f.y, self.m)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self {
            f: Vector2::new(v.x, v.y),
            m: v.z,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.f.x.is_finite() && self.f.y.is_finite() && self.m.is_finite()
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench {
            f: self.f + rhs.f,
            m: self.m + rhs.m,
        }
    }
}

impl std::ops::Sub for Wrench {
    type Output = Wrench;
    fn sub(self, rhs: Wrench) -> Wrench {
        Wrench {
            f: self.f - rhs.f,
            m: self.m - rhs.m,
        }
    }
}

impl std::ops::Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench {
            f: -self.f,
            m: -self.m,
        }
    }
}

/// Per-agent contact geometry on the object, body frame.
#[derive(Clone, Debug)]
pub struct ContactSpec {
    /// Anchor point of the contact on an object face, m.
    pub r_0: Vector2<f64>,
    /// Inward unit normal (the direction the agent pushes), unit.
    pub n_hat: Vector2<f64>,
    /// Unit tangent along the face; slides move the contact along it.
    pub t_hat: Vector2<f64>,
    /// Slide bounds relative to the anchor, m; `d_min <= 0 <= d_max`.
    pub d_min: f64,
    pub d_max: f64,
    /// Whether the scenario currently commands this agent.
    pub active: bool,
}

impl ContactSpec {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let unit = |v: Vector2<f64>| (v.norm() - 1.0).abs() < 1e-9;
        if !unit(self.n_hat) || !unit(self.t_hat) {
            return Err(DynamicsError::InvalidParams(
                "contact normal/tangent must be unit".into(),
            ));
        }
        if self.n_hat.dot(&self.t_hat).abs() > 1e-9 {
            return Err(DynamicsError::InvalidParams(
                "contact normal and tangent must be orthogonal".into(),
            ));
        }
        if !(self.d_min <= 0.0 && 0.0 <= self.d_max) {
            return Err(DynamicsError::InvalidParams(
                "slide bounds must straddle zero".into(),
            ));
        }
        Ok(())
    }

    /// Contact point for slide `d`, body frame.
    pub fn point(&self, d: f64) -> Vector2<f64> {
        self.r_0 + d * self.t_hat
    }
}

/// One agent's commanded contact interaction, as seen by the physics.
#[derive(Clone, Debug)]
pub struct ContactCommand {
    pub spec: ContactSpec,
    /// Commanded slide position along the face, m.
    pub d: f64,
    /// Commanded (delivered) force magnitude along the inward normal, N.
    pub force: f64,
    /// Distance from the agent's body center to the face when touching, m.
    pub standoff: f64,
}

/// 2x2 yaw rotation.
pub fn rot2(theta: f64) -> nalgebra::Matrix2<f64> {
    nalgebra::Rotation2::new(theta).into_inner()
}

/// Left-perpendicular of a planar vector: `perp(v) = (-v_y, v_x)`.
pub fn perp(v: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

/// Planar cross product `a x b` (scalar, z component).
pub fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Rotation of generalized coordinates: 2x2 yaw block plus 1 on the moment axis.
pub fn rotation(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Generalized mass matrix `H(q)` about the reference point.
///
/// `H = m R [[1, 0, r_y], [0, 1, -r_x], [r_y, -r_x, I_pzz/m]] R^T`, which is
/// symmetric positive definite whenever `m > 0` and `I_Gzz > 0`.
pub fn mass_matrix(params: &ObjectParams, theta: f64) -> Result<Matrix3<f64>, DynamicsError> {
    params.validate()?;
    let h = mass_matrix_unchecked(params, theta);
    // det of the inner block is I_Gzz / m > 0; guard against degenerate input anyway.
    if h[(0, 0)] <= 0.0 || h.determinant() <= 0.0 {
        return Err(DynamicsError::NotPositiveDefinite);
    }
    Ok(h)
}

fn mass_matrix_unchecked(params: &ObjectParams, theta: f64) -> Matrix3<f64> {
    let m = params.mass;
    let (a, b) = com_coupling(params, theta);
    Matrix3::new(
        m,
        0.0,
        a,
        0.0,
        m,
        b,
        a,
        b,
        params.inertia_p(),
    )
}

/// Off-diagonal COM coupling terms of `H`: `a = (R r_p)_y * m`, `b = -(R r_p)_x * m`.
fn com_coupling(params: &ObjectParams, theta: f64) -> (f64, f64) {
    let rw = rot2(theta) * params.r_p;
    (params.mass * rw.y, -params.mass * rw.x)
}

/// Analytic `dH/dtheta`; `H_dot = omega * h_prime`.
pub fn h_prime(params: &ObjectParams, theta: f64) -> Matrix3<f64> {
    let (a, b) = com_coupling(params, theta);
    // d a / d theta = -b, d b / d theta = a.
    Matrix3::new(0.0, 0.0, -b, 0.0, 0.0, a, -b, a, 0.0)
}

/// Velocity-product term `C(q, q_dot) q_dot = m omega^2 R [r_x, r_y, 0]`.
pub fn coriolis_vector(params: &ObjectParams, theta: f64, omega: f64) -> Vector3<f64> {
    let rw = rot2(theta) * params.r_p;
    let f = params.mass * omega * omega * rw;
    Vector3::new(f.x, f.y, 0.0)
}

/// Full Coriolis matrix from the Christoffel symbols of `H`.
///
/// Satisfies both `C q_dot = coriolis_vector` and the skew-symmetry of
/// `H_dot - 2C` used by the stability analysis.
pub fn coriolis_matrix(params: &ObjectParams, theta: f64, qdot: &Vector3<f64>) -> Matrix3<f64> {
    let hp = h_prime(params, theta);
    let omega = qdot.z;
    let hp_qdot = hp * qdot;
    let e3 = Vector3::new(0.0, 0.0, 1.0);
    0.5 * omega * hp + 0.5 * (hp_qdot * e3.transpose() - e3 * hp_qdot.transpose())
}

/// Ground friction wrench acting on the object (world frame, moment about `p`).
///
/// Kinetic regime (COM speed above [`V_EPS`] or yaw rate above [`OMEGA_EPS`]):
/// the force is `-mu m g` along the COM velocity direction and the moment is
/// `-mu m g rho_eff tanh(omega / OMEGA_EPS)`. Static regime: the returned
/// wrench opposes `applied`, capped at `mu m g` / `mu m g rho_eff`, so an
/// object at rest stays at rest while the caps are not exceeded.
pub fn friction_wrench(params: &ObjectParams, state: &ObjectState, applied: &Wrench) -> Wrench {
    let mu = params.mu_at_com(state);
    let normal_load = mu * params.mass * params.gravity;
    if normal_load == 0.0 {
        return Wrench::zero();
    }
    let v_com = state.com_velocity(params.r_p);
    let moving = v_com.norm() > V_EPS || state.omega.abs() > OMEGA_EPS;
    if moving {
        let speed = v_com.norm();
        let f = if speed > 0.0 {
            -normal_load * (v_com / speed.max(V_EPS))
        } else {
            Vector2::zeros()
        };
        let m = -normal_load * params.rho_eff * (state.omega / OMEGA_EPS).tanh();
        Wrench { f, m }
    } else {
        let f_cap = normal_load;
        let m_cap = normal_load * params.rho_eff;
        let f_mag = applied.f.norm();
        let f = if f_mag <= f_cap {
            -applied.f
        } else {
            -applied.f * (f_cap / f_mag)
        };
        let m = -applied.m.clamp(-m_cap, m_cap);
        Wrench { f, m }
    }
}

/// Resolve commanded agent contacts into the net wrench on the object.
///
/// An agent contributes only while in contact: its commanded contact point
/// must lie on the physical face (within the rectangle) and its body must sit
/// within `tol` of the standoff distance from the face. Forces are push-only;
/// negative commands contribute nothing.
pub fn contact_resolve(
    state: &ObjectState,
    commands: &[ContactCommand],
    agent_positions: &[Vector2<f64>],
    params: &ObjectParams,
    tol: f64,
) -> (Wrench, Vec<bool>) {
    assert_eq!(commands.len(), agent_positions.len());
    let r = rot2(state.theta);
    let mut total = Wrench::zero();
    let mut flags = Vec::with_capacity(commands.len());
    for (cmd, agent_pos) in commands.iter().zip(agent_positions) {
        if !cmd.spec.active {
            flags.push(false);
            continue;
        }
        let point_body = cmd.spec.point(cmd.d);
        let on_face = point_body.x.abs() <= params.half_extents.x + 1e-9
            && point_body.y.abs() <= params.half_extents.y + 1e-9;
        let point_world = state.x_p + r * point_body;
        let n_world = r * cmd.spec.n_hat;
        // Agent center sits on the outward side of the face, `standoff` away.
        let gap = (agent_pos - point_world).dot(&n_world) + cmd.standoff;
        let in_contact = on_face && gap.abs() <= tol;
        flags.push(in_contact);
        if in_contact && cmd.force > 0.0 {
            let f_world = n_world * cmd.force;
            total.f += f_world;
            total.m += cmd.force * cross2(point_body, cmd.spec.n_hat);
        }
    }
    (total, flags)
}

/// Advance the object one semi-implicit Euler step under the applied wrench.
///
/// Friction is evaluated internally; in the static regime with the applied
/// wrench below the friction caps the velocities are zeroed (true stick).
pub fn step(
    state: &ObjectState,
    params: &ObjectParams,
    tau: &Wrench,
    dt: f64,
) -> Result<ObjectState, DynamicsError> {
    assert!(dt > 0.0, "dt must be positive");
    let f_k = friction_wrench(params, state, tau);

    let mu = params.mu_at_com(state);
    let normal_load = mu * params.mass * params.gravity;
    let v_com = state.com_velocity(params.r_p);
    let at_rest = v_com.norm() <= V_EPS && state.omega.abs() <= OMEGA_EPS;
    let below_caps =
        tau.f.norm() <= normal_load && tau.m.abs() <= normal_load * params.rho_eff;
    if normal_load > 0.0 && at_rest && below_caps {
        // Stick: kill residual creep and hold the pose.
        return Ok(ObjectState {
            x_p: state.x_p,
            theta: state.theta,
            v_p: Vector2::zeros(),
            omega: 0.0,
        });
    }

    let h = mass_matrix(params, state.theta)?;
    let c_qdot = coriolis_vector(params, state.theta, state.omega);
    let rhs = tau.as_vector() - c_qdot + f_k.as_vector();
    let qddot = h
        .cholesky()
        .ok_or(DynamicsError::NotPositiveDefinite)?
        .solve(&rhs);
    if !qddot.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFiniteAcceleration(*tau));
    }

    let v_p = state.v_p + dt * Vector2::new(qddot.x, qddot.y);
    let omega = state.omega + dt * qddot.z;
    Ok(ObjectState {
        x_p: state.x_p + dt * v_p,
        theta: wrap_angle(state.theta + dt * omega),
        v_p,
        omega,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn params(mass: f64, inertia_com: f64, r_p: Vector2<f64>, mu: f64) -> ObjectParams {
        ObjectParams {
            mass,
            inertia_com,
            r_p,
            half_extents: Vector2::new(0.5, 0.4),
            mu: FrictionMap::uniform(mu),
            rho_eff: 0.2,
            gravity: 9.81,
        }
    }

    #[test]
    fn rotation_identity_and_quarter_turn() {
        assert_relative_eq!(rotation(0.0), Matrix3::identity(), epsilon = 1e-15);
        let r = rotation(FRAC_PI_2);
        assert_relative_eq!(r.column(0).into_owned(), Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(r.column(1).into_owned(), Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(r.column(2).into_owned(), Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn rotation_group_property() {
        for (a, b) in [(0.3, -1.1), (2.0, 2.5), (-0.4, 0.9)] {
            let lhs = rotation(a) * rotation(b);
            // Compose angles directly; wrap does not matter for the matrix.
            let rhs = rotation(a + b);
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn mass_matrix_zero_com_offset() {
        let p = params(5.0, 0.5, Vector2::zeros(), 0.0);
        let h = mass_matrix(&p, 0.0).unwrap();
        assert_relative_eq!(h, Matrix3::from_diagonal(&Vector3::new(5.0, 5.0, 0.5)), epsilon = 1e-12);
        // Rotation invariance with isotropic translational block.
        let h2 = mass_matrix(&p, 1.3).unwrap();
        assert_relative_eq!(h2, Matrix3::from_diagonal(&Vector3::new(5.0, 5.0, 0.5)), epsilon = 1e-12);
    }

    #[test]
    fn mass_matrix_hand_evaluated_offsets() {
        let p = params(5.0, 0.4, Vector2::new(0.2, 0.1), 0.0);
        let h = mass_matrix(&p, 0.0).unwrap();
        assert_relative_eq!(h[(0, 2)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(h[(1, 2)], -1.0, epsilon = 1e-12);
        // I_pzz = 0.4 + 5 * (0.04 + 0.01)
        assert_relative_eq!(h[(2, 2)], 0.65, epsilon = 1e-12);
        assert_relative_eq!(h, h.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn mass_matrix_matches_explicit_rotation_form() {
        let p = params(3.0, 0.7, Vector2::new(-0.1, 0.25), 0.0);
        for theta in [0.0, 0.6, -2.2, 3.0] {
            let h = mass_matrix(&p, theta).unwrap();
            let r = rotation(theta);
            let inner = Matrix3::new(
                1.0,
                0.0,
                p.r_p.y,
                0.0,
                1.0,
                -p.r_p.x,
                p.r_p.y,
                -p.r_p.x,
                p.inertia_p() / p.mass,
            );
            let expected = p.mass * r * inner * r.transpose();
            assert_relative_eq!(h, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn coriolis_vector_cases() {
        let p = params(5.0, 0.4, Vector2::new(0.2, 0.1), 0.0);
        assert_eq!(coriolis_vector(&p, 0.7, 0.0), Vector3::zeros());
        let p0 = params(5.0, 0.4, Vector2::zeros(), 0.0);
        assert_eq!(coriolis_vector(&p0, 0.7, 2.0), Vector3::zeros());
        let c = coriolis_vector(&p, 0.0, 1.0);
        assert_relative_eq!(c, Vector3::new(1.0, 0.5, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn coriolis_matrix_consistent_with_vector() {
        let p = params(4.0, 0.5, Vector2::new(0.15, -0.2), 0.0);
        for (theta, qdot) in [
            (0.3, Vector3::new(0.5, -0.2, 0.8)),
            (-1.2, Vector3::new(0.0, 0.0, 2.0)),
            (2.0, Vector3::new(1.0, 1.0, -0.5)),
        ] {
            let c = coriolis_matrix(&p, theta, &qdot);
            let cv = coriolis_vector(&p, theta, qdot.z);
            assert_relative_eq!(c * qdot, cv, epsilon = 1e-11);
        }
    }

    #[test]
    fn h_prime_matches_finite_difference() {
        let p = params(4.0, 0.5, Vector2::new(0.15, -0.2), 0.0);
        let eps = 1e-6;
        for theta in [0.0, 0.8, -2.4] {
            let hp = h_prime(&p, theta);
            let fd = (mass_matrix_unchecked(&p, theta + eps)
                - mass_matrix_unchecked(&p, theta - eps))
                / (2.0 * eps);
            assert_relative_eq!(hp, fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn friction_kinetic_magnitude() {
        let p = params(5.0, 0.5, Vector2::zeros(), 0.3);
        let state = ObjectState {
            x_p: Vector2::zeros(),
            theta: 0.0,
            v_p: Vector2::new(1.0, 0.0),
            omega: 0.0,
        };
        let fk = friction_wrench(&p, &state, &Wrench::zero());
        assert_relative_eq!(fk.f.x, -14.715, epsilon = 1e-9);
        assert_relative_eq!(fk.f.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn friction_zero_mu_is_zero() {
        let p = params(5.0, 0.5, Vector2::new(0.1, 0.0), 0.0);
        let state = ObjectState {
            x_p: Vector2::new(1.0, 2.0),
            theta: 0.4,
            v_p: Vector2::new(0.3, -0.2),
            omega: 1.0,
        };
        assert_eq!(friction_wrench(&p, &state, &Wrench::new(3.0, 0.0, 1.0)), Wrench::zero());
    }

    #[test]
    fn friction_static_stick_below_cap() {
        let p = params(5.0, 0.5, Vector2::zeros(), 0.3);
        let state = ObjectState::at_rest(Vector2::zeros(), 0.0);
        let applied = Wrench::new(5.0, 0.0, 0.0);
        let fk = friction_wrench(&p, &state, &applied);
        assert_relative_eq!(fk.f, -applied.f, epsilon = 1e-12);
        let next = step(&state, &p, &applied, 1e-3).unwrap();
        assert_eq!(next.v_p, Vector2::zeros());
        assert_eq!(next.x_p, state.x_p);
    }

    #[test]
    fn friction_zone_map_lookup() {
        let mut map = FrictionMap::uniform(0.3);
        map.add_zone(2.0, 0.8);
        assert_eq!(map.mu_at(-1.0), 0.3);
        assert_eq!(map.mu_at(1.999), 0.3);
        assert_eq!(map.mu_at(2.0), 0.8);
        assert_eq!(map.mu_at(10.0), 0.8);
    }

    #[test]
    fn contact_resolve_through_reference_point() {
        let p = params(5.0, 0.5, Vector2::zeros(), 0.0);
        let state = ObjectState::at_rest(Vector2::zeros(), 0.0);
        let spec = ContactSpec {
            r_0: Vector2::new(-0.5, 0.0),
            n_hat: Vector2::new(1.0, 0.0),
            t_hat: Vector2::new(0.0, 1.0),
            d_min: -0.2,
            d_max: 0.2,
            active: true,
        };
        spec.validate().unwrap();
        let cmd = ContactCommand {
            spec,
            d: 0.0,
            force: 10.0,
            standoff: 0.05,
        };
        let agent = Vector2::new(-0.55, 0.0);
        let (w, flags) = contact_resolve(&state, &[cmd], &[agent], &p, 0.02);
        assert_eq!(flags, vec![true]);
        assert_relative_eq!(w.f, Vector2::new(10.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(w.m, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn contact_resolve_moment_arm() {
        let p = params(5.0, 0.5, Vector2::zeros(), 0.0);
        let state = ObjectState::at_rest(Vector2::zeros(), 0.0);
        let spec = ContactSpec {
            r_0: Vector2::new(-0.5, 0.2),
            n_hat: Vector2::new(1.0, 0.0),
            t_hat: Vector2::new(0.0, 1.0),
            d_min: -0.2,
            d_max: 0.2,
            active: true,
        };
        let cmd = ContactCommand {
            spec,
            d: 0.0,
            force: 10.0,
            standoff: 0.05,
        };
        let agent = Vector2::new(-0.55, 0.2);
        let (w, flags) = contact_resolve(&state, &[cmd], &[agent], &p, 0.02);
        assert_eq!(flags, vec![true]);
        assert_relative_eq!(w.m, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn contact_resolve_drops_separated_agent() {
        let p = params(5.0, 0.5, Vector2::zeros(), 0.0);
        let state = ObjectState::at_rest(Vector2::zeros(), 0.0);
        let spec = ContactSpec {
            r_0: Vector2::new(-0.5, 0.0),
            n_hat: Vector2::new(1.0, 0.0),
            t_hat: Vector2::new(0.0, 1.0),
            d_min: -0.2,
            d_max: 0.2,
            active: true,
        };
        let tol = 0.02;
        let cmd = ContactCommand {
            spec,
            d: 0.0,
            force: 10.0,
            standoff: 0.05,
        };
        // Displaced 2*tol beyond the standoff surface.
        let agent = Vector2::new(-0.55 - 2.0 * tol, 0.0);
        let (w, flags) = contact_resolve(&state, &[cmd], &[agent], &p, tol);
        assert_eq!(flags, vec![false]);
        assert_eq!(w, Wrench::zero());
    }

    #[test]
    fn contact_resolve_drops_slide_off_face() {
        let p = params(5.0, 0.5, Vector2::zeros(), 0.0);
        let state = ObjectState::at_rest(Vector2::zeros(), 0.0);
        let spec = ContactSpec {
            r_0: Vector2::new(-0.5, 0.2),
            n_hat: Vector2::new(1.0, 0.0),
            t_hat: Vector2::new(0.0, 1.0),
            d_min: -0.2,
            d_max: 0.2,
            active: true,
        };
        // Commanded point at y = 0.2 + 0.3 > half extent 0.4.
        let cmd = ContactCommand {
            spec,
            d: 0.3,
            force: 10.0,
            standoff: 0.05,
        };
        let agent = Vector2::new(-0.55, 0.5);
        let (w, flags) = contact_resolve(&state, &[cmd], &[agent], &p, 0.02);
        assert_eq!(flags, vec![false]);
        assert_eq!(w, Wrench::zero());
    }

    #[test]
    fn step_force_over_mass() {
        let p = params(5.0, 0.5, Vector2::zeros(), 0.0);
        let state = ObjectState::at_rest(Vector2::zeros(), 0.0);
        let next = step(&state, &p, &Wrench::new(5.0, 0.0, 0.0), 1e-3).unwrap();
        assert_relative_eq!(next.v_p.x, 1e-3, epsilon = 1e-15);
        assert_relative_eq!(next.v_p.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn step_refinement_convergence() {
        let p = params(4.0, 0.6, Vector2::new(0.1, -0.05), 0.0);
        let tau = Wrench::new(2.0, 1.0, 0.3);
        let run = |dt: f64| {
            let mut s = ObjectState::at_rest(Vector2::zeros(), 0.2);
            let n = (1.0 / dt).round() as usize;
            for _ in 0..n {
                s = step(&s, &p, &tau, dt).unwrap();
            }
            s
        };
        let coarse = run(1e-3);
        let fine = run(1e-4);
        assert!((coarse.x_p - fine.x_p).norm() < 5e-3);
        assert!((coarse.v_p - fine.v_p).norm() < 5e-3);
        assert!((coarse.theta - fine.theta).abs() < 5e-3);
    }

    fn momentum_drift(p: &ObjectParams, s0: ObjectState, dt: f64, t_end: f64) -> (f64, f64) {
        let mut s = s0;
        let lin0 = p.mass * s.com_velocity(p.r_p);
        let ang0 = p.inertia_com * s.omega;
        let n = (t_end / dt).round() as usize;
        for _ in 0..n {
            s = step(&s, p, &Wrench::zero(), dt).unwrap();
        }
        let lin1 = p.mass * s.com_velocity(p.r_p);
        let ang1 = p.inertia_com * s.omega;
        (
            (lin1 - lin0).norm() / lin0.norm().max(1e-12),
            (ang1 - ang0).abs() / ang0.abs().max(1e-12),
        )
    }

    #[test]
    fn momentum_conservation_translation_with_com_offset() {
        let p = params(4.0, 0.6, Vector2::new(0.12, -0.07), 0.0);
        let s0 = ObjectState {
            x_p: Vector2::zeros(),
            theta: 0.3,
            v_p: Vector2::new(0.4, -0.1),
            omega: 0.0,
        };
        let (lin, _) = momentum_drift(&p, s0, 1e-3, 10.0);
        assert!(lin < 1e-6, "linear drift {lin:.3e}");
    }

    #[test]
    fn momentum_conservation_spin_about_com() {
        let p = params(4.0, 0.6, Vector2::zeros(), 0.0);
        let s0 = ObjectState {
            x_p: Vector2::zeros(),
            theta: 0.3,
            v_p: Vector2::new(0.4, -0.1),
            omega: 0.8,
        };
        let (lin, ang) = momentum_drift(&p, s0, 1e-3, 10.0);
        assert!(lin < 1e-6, "linear drift {lin:.3e}");
        assert!(ang < 1e-6, "angular drift {ang:.3e}");
    }

    // Spin plus COM offset couples the rows; the first-order integrator then
    // carries an O(omega^2 dt |r_p|) momentum ripple that shrinks linearly
    // with dt. Angular momentum about the COM stays exact (omega is untouched
    // by the zero third row).
    #[test]
    fn momentum_ripple_spin_with_offset_shrinks_with_dt() {
        let p = params(4.0, 0.6, Vector2::new(0.12, -0.07), 0.0);
        let s0 = ObjectState {
            x_p: Vector2::zeros(),
            theta: 0.3,
            v_p: Vector2::new(0.4, -0.1),
            omega: 0.8,
        };
        let (lin_coarse, ang_coarse) = momentum_drift(&p, s0, 1e-3, 10.0);
        let (lin_fine, _) = momentum_drift(&p, s0, 1e-4, 10.0);
        assert!(ang_coarse < 1e-9, "angular drift {ang_coarse:.3e}");
        assert!(lin_coarse < 1e-3, "linear ripple {lin_coarse:.3e}");
        assert!(lin_fine < 0.2 * lin_coarse + 1e-12, "ripple not O(dt)");
    }
}
