//! Object-level adaptive controller and the PD baseline.
//!
//! The controller tracks a desired planar pose trajectory without knowing
//! the object's mass, inertia, COM offset, or the external (friction)
//! wrench. It works on the composite error `s = q_err_dot + lambda q_err`
//! and estimates two parameter vectors:
//!
//! * `Theta = [m, m r_x, m r_y, I_pzz]` — the minimal linear
//!   parameterization of the generalized mass matrix about the reference
//!   point, so that `H qddot_r + C qdot_r = Y_Theta Theta`.
//! * `Psi` — a constant external wrench with `Y_Psi = I`, which captures
//!   Coulomb friction at near-constant velocity direction.
//!
//! The control law is `tau = Y_Theta Theta_hat + Y_Psi Psi_hat - K_D s`,
//! with gradient adaptation `Theta_hat_dot = -Gamma_Theta Y_Theta^T s`
//! (same for `Psi_hat`). Estimates are not expected to converge to the true
//! values; only tracking is guaranteed.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};
use thiserror::Error;

use crate::dynamics::{ObjectState, Wrench};
use crate::wrap_angle;

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("gain matrix {0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("lambda must be nonnegative")]
    InvalidLambda,
}

/// Adaptive parameter estimates. Entries may take any finite value,
/// including nonphysical ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateState {
    pub theta_hat: Vector4<f64>,
    pub psi_hat: Vector3<f64>,
}

impl EstimateState {
    pub fn zeroed() -> Self {
        Self {
            theta_hat: Vector4::zeros(),
            psi_hat: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta_hat.iter().chain(self.psi_hat.iter()).all(|v| v.is_finite())
    }
}

/// Gains of the adaptive controller.
#[derive(Clone, Debug)]
pub struct AdaptiveGains {
    /// Composite-error slope, 1/s.
    pub lambda: f64,
    /// Feedback gain on `s`, positive definite.
    pub k_d: Matrix3<f64>,
    /// Adaptation rate for `Theta_hat`, positive definite.
    pub gamma_theta: Matrix4<f64>,
    /// Adaptation rate for `Psi_hat`, positive definite.
    pub gamma_psi: Matrix3<f64>,
}

impl AdaptiveGains {
    pub fn validate(&self) -> Result<(), AdaptiveError> {
        if !(self.lambda >= 0.0) {
            return Err(AdaptiveError::InvalidLambda);
        }
        let sym3 = |m: &Matrix3<f64>| (m - m.transpose()).amax() <= 1e-9 * m.amax().max(1.0);
        let sym4 = |m: &Matrix4<f64>| (m - m.transpose()).amax() <= 1e-9 * m.amax().max(1.0);
        if !sym3(&self.k_d) || self.k_d.cholesky().is_none() {
            return Err(AdaptiveError::NotPositiveDefinite("k_d"));
        }
        if !sym4(&self.gamma_theta) || self.gamma_theta.cholesky().is_none() {
            return Err(AdaptiveError::NotPositiveDefinite("gamma_theta"));
        }
        if !sym3(&self.gamma_psi) || self.gamma_psi.cholesky().is_none() {
            return Err(AdaptiveError::NotPositiveDefinite("gamma_psi"));
        }
        Ok(())
    }
}

impl Default for AdaptiveGains {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            k_d: Matrix3::from_diagonal(&Vector3::new(40.0, 40.0, 15.0)),
            gamma_theta: Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, 0.5)),
            gamma_psi: Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0)),
        }
    }
}

/// Output saturation applied to commanded wrenches.
#[derive(Clone, Copy, Debug)]
pub struct Saturation {
    /// Force magnitude limit, N.
    pub f_max: f64,
    /// Moment magnitude limit, N m.
    pub m_max: f64,
}

impl Default for Saturation {
    fn default() -> Self {
        Self {
            f_max: 150.0,
            m_max: 50.0,
        }
    }
}

impl Saturation {
    /// Clamp a wrench to the limits. Returns the clamped wrench and whether
    /// any limit was hit.
    pub fn clamp(&self, w: Wrench) -> (Wrench, bool) {
        let mut out = w;
        let mut hit = false;
        let f_norm = w.f.norm();
        if f_norm > self.f_max {
            out.f = w.f * (self.f_max / f_norm);
            hit = true;
        }
        if w.m.abs() > self.m_max {
            out.m = self.m_max.copysign(w.m);
            hit = true;
        }
        (out, hit)
    }
}

/// One sample of the desired trajectory: pose `[x, y, theta]` and its first
/// two time derivatives.
#[derive(Clone, Copy, Debug)]
pub struct TrajectorySample {
    pub q: Vector3<f64>,
    pub qdot: Vector3<f64>,
    pub qddot: Vector3<f64>,
}

impl TrajectorySample {
    pub fn hold(q: Vector3<f64>) -> Self {
        Self {
            q,
            qdot: Vector3::zeros(),
            qddot: Vector3::zeros(),
        }
    }
}

/// Pose tracking error `[x_e, y_e, theta_e]` with the yaw wrapped.
pub fn pose_error(state: &ObjectState, des: &TrajectorySample) -> Vector3<f64> {
    Vector3::new(
        state.x_p.x - des.q.x,
        state.x_p.y - des.q.y,
        wrap_angle(state.theta - des.q.z),
    )
}

/// Composite error `s = [v_e + lambda x_e; omega_e + lambda theta_e]`.
pub fn composite_error(state: &ObjectState, des: &TrajectorySample, lambda: f64) -> Vector3<f64> {
    let q_e = pose_error(state, des);
    let qdot_e = state.qdot() - des.qdot;
    qdot_e + lambda * q_e
}

/// Reference velocity `qdot_r = qdot - s` and its analytic derivative
/// `qddot_r = qddot_d - lambda (qdot - qdot_d)`.
pub fn reference_motion(
    state: &ObjectState,
    des: &TrajectorySample,
    lambda: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let s = composite_error(state, des, lambda);
    let qdot_r = state.qdot() - s;
    let qddot_r = des.qddot - lambda * (state.qdot() - des.qdot);
    (qdot_r, qddot_r)
}

/// Regressor `Y_Theta` with `H qddot_r + C qdot_r = Y_Theta Theta`.
///
/// Column `j` is the dynamics term evaluated with unit parameter `e_j`;
/// the full Coriolis matrix contributes only through `omega * omega_r`.
pub fn regressor_theta(
    theta: f64,
    omega: f64,
    qdot_r: &Vector3<f64>,
    qddot_r: &Vector3<f64>,
) -> Matrix3x4<f64> {
    let (sin, cos) = theta.sin_cos();
    let om_r = qdot_r.z;
    let (ax_r, ay_r, al_r) = (qddot_r.x, qddot_r.y, qddot_r.z);
    let ww = omega * om_r;
    Matrix3x4::new(
        ax_r,
        sin * al_r + cos * ww,
        cos * al_r - sin * ww,
        0.0,
        ay_r,
        -cos * al_r + sin * ww,
        sin * al_r + cos * ww,
        0.0,
        0.0,
        sin * ax_r - cos * ay_r,
        cos * ax_r + sin * ay_r,
        al_r,
    )
}

/// Regressor for the external wrench: the constant-disturbance model
/// `f_k = Y_Psi Psi` with `Y_Psi = I`.
pub fn regressor_psi(_state: &ObjectState) -> Matrix3<f64> {
    Matrix3::identity()
}

/// Adaptive control law `tau = Y_Theta Theta_hat + Y_Psi Psi_hat - K_D s`,
/// clamped to the configured saturation.
pub fn control_wrench(
    est: &EstimateState,
    y_theta: &Matrix3x4<f64>,
    y_psi: &Matrix3<f64>,
    s: &Vector3<f64>,
    k_d: &Matrix3<f64>,
    sat: &Saturation,
) -> (Wrench, bool) {
    let tau = y_theta * est.theta_hat + y_psi * est.psi_hat - k_d * s;
    sat.clamp(Wrench::from_vector(&tau))
}

/// One Euler step of the gradient adaptation laws.
pub fn adapt_step(
    est: &EstimateState,
    y_theta: &Matrix3x4<f64>,
    y_psi: &Matrix3<f64>,
    s: &Vector3<f64>,
    gains: &AdaptiveGains,
    dt: f64,
) -> EstimateState {
    assert!(dt > 0.0, "dt must be positive");
    EstimateState {
        theta_hat: est.theta_hat - dt * (gains.gamma_theta * (y_theta.transpose() * s)),
        psi_hat: est.psi_hat - dt * (gains.gamma_psi * (y_psi.transpose() * s)),
    }
}

/// Lyapunov function of the closed loop; requires the true parameters and is
/// meant as a test/diagnostic oracle.
pub fn lyapunov_value(
    s: &Vector3<f64>,
    est: &EstimateState,
    theta_true: &Vector4<f64>,
    psi_true: &Vector3<f64>,
    h: &Matrix3<f64>,
    gains: &AdaptiveGains,
) -> f64 {
    let theta_err = est.theta_hat - theta_true;
    let psi_err = est.psi_hat - psi_true;
    let gamma_theta_inv = gains
        .gamma_theta
        .try_inverse()
        .expect("gamma_theta invertible");
    let gamma_psi_inv = gains.gamma_psi.try_inverse().expect("gamma_psi invertible");
    0.5 * ((s.transpose() * h * s)[0]
        + (theta_err.transpose() * gamma_theta_inv * theta_err)[0]
        + (psi_err.transpose() * gamma_psi_inv * psi_err)[0])
}

/// Non-adaptive baseline: `tau = -K_P q_e - K_D qdot_e`, same saturation.
pub fn pd_wrench(
    state: &ObjectState,
    des: &TrajectorySample,
    k_p: &Matrix3<f64>,
    k_d_pd: &Matrix3<f64>,
    sat: &Saturation,
) -> (Wrench, bool) {
    let q_e = pose_error(state, des);
    let qdot_e = state.qdot() - des.qdot;
    let tau = -k_p * q_e - k_d_pd * qdot_e;
    sat.clamp(Wrench::from_vector(&tau))
}

/// Stateful wrapper threading the estimates through L1 ticks.
#[derive(Clone, Debug)]
pub struct AdaptiveController {
    pub gains: AdaptiveGains,
    pub saturation: Saturation,
    pub estimates: EstimateState,
}

/// What one controller tick produced, for logging.
#[derive(Clone, Copy, Debug)]
pub struct ControlTick {
    pub s: Vector3<f64>,
    pub wrench: Wrench,
    pub saturated: bool,
}

impl AdaptiveController {
    pub fn new(
        gains: AdaptiveGains,
        saturation: Saturation,
        initial: EstimateState,
    ) -> Result<Self, AdaptiveError> {
        gains.validate()?;
        Ok(Self {
            gains,
            saturation,
            estimates: initial,
        })
    }

    /// Compute the wrench for the current state and advance the estimates by
    /// one adaptation step of length `dt`.
    pub fn tick(&mut self, state: &ObjectState, des: &TrajectorySample, dt: f64) -> ControlTick {
        let s = composite_error(state, des, self.gains.lambda);
        let (qdot_r, qddot_r) = reference_motion(state, des, self.gains.lambda);
        let y_theta = regressor_theta(state.theta, state.omega, &qdot_r, &qddot_r);
        let y_psi = regressor_psi(state);
        let (wrench, saturated) = control_wrench(
            &self.estimates,
            &y_theta,
            &y_psi,
            &s,
            &self.gains.k_d,
            &self.saturation,
        );
        self.estimates = adapt_step(&self.estimates, &y_theta, &y_psi, &s, &self.gains, dt);
        ControlTick {
            s,
            wrench,
            saturated,
        }
    }
}

/// PD baseline controller with the same external interface.
#[derive(Clone, Debug)]
pub struct PdController {
    pub k_p: Matrix3<f64>,
    pub k_d: Matrix3<f64>,
    pub saturation: Saturation,
}

impl Default for PdController {
    fn default() -> Self {
        Self {
            k_p: Matrix3::from_diagonal(&Vector3::new(60.0, 60.0, 25.0)),
            k_d: Matrix3::from_diagonal(&Vector3::new(40.0, 40.0, 15.0)),
            saturation: Saturation::default(),
        }
    }
}

impl PdController {
    pub fn tick(&self, state: &ObjectState, des: &TrajectorySample) -> ControlTick {
        let (wrench, saturated) = pd_wrench(state, des, &self.k_p, &self.k_d, &self.saturation);
        ControlTick {
            s: composite_error(state, des, 1.0),
            wrench,
            saturated,
        }
    }
}
