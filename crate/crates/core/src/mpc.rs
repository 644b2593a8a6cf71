//! Decentralized per-agent MPC with the manipulation force as an augmented
//! state.
//!
//! Each agent is a planar rigid body driven by a net ground-reaction force
//! and yaw moment. The manipulation force it is commanded to transmit enters
//! the prediction model as two extra states `f_r_w / m` with zero dynamics
//! (constant over the horizon), coupled into the velocity rows with the
//! reaction sign: pushing the object pushes the agent back.
//!
//! The horizon problem is condensed: states are eliminated through the
//! prediction matrices, leaving the stacked inputs as decision variables,
//! with a linearized friction pyramid `|u_f| <= mu m g` per axis and a yaw
//! moment cap as hard bounds.

use nalgebra::{SMatrix, SVector, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::dynamics::{perp, rot2, ContactSpec, ObjectState};
use crate::qp::{self, QpProblem, QpStatus};
use crate::wrap_angle;

/// Sign with which the commanded manipulation force enters the agent's
/// velocity dynamics: reaction on the robot.
pub const REACTION_SIGN: f64 = -1.0;

const NX: usize = 8;
const NU: usize = 3;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid agent parameters: {0}")]
    InvalidParams(String),
    #[error("invalid MPC config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Qp(#[from] qp::QpError),
}

/// Physical parameters of one agent.
#[derive(Clone, Copy, Debug)]
pub struct AgentParams {
    /// Mass, kg.
    pub mass: f64,
    /// Yaw inertia, kg m^2.
    pub inertia: f64,
    /// Foot-ground friction coefficient.
    pub mu_ground: f64,
    /// Gravity, m/s^2.
    pub gravity: f64,
    /// Yaw moment limit, N m.
    pub moment_cap: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            mass: 12.0,
            inertia: 0.35,
            mu_ground: 0.5,
            gravity: 9.81,
            moment_cap: 8.0,
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<(), MpcError> {
        let ok = self.mass > 0.0
            && self.inertia > 0.0
            && self.mu_ground > 0.0
            && self.gravity > 0.0
            && self.moment_cap > 0.0;
        if !ok {
            return Err(MpcError::InvalidParams(
                "all parameters must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Per-axis traction bound of the friction pyramid, N.
    pub fn traction_bound(&self) -> f64 {
        self.mu_ground * self.mass * self.gravity
    }
}

/// Planar agent rigid-body state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub pos: Vector2<f64>,
    pub yaw: f64,
    pub vel: Vector2<f64>,
    pub yaw_rate: f64,
}

impl AgentState {
    pub fn at_rest(pos: Vector2<f64>, yaw: f64) -> Self {
        Self {
            pos,
            yaw,
            vel: Vector2::zeros(),
            yaw_rate: 0.0,
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.pos.x,
            self.pos.y,
            self.yaw,
            self.vel.x,
            self.vel.y,
            self.yaw_rate,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            pos: Vector2::new(v[0], v[1]),
            yaw: v[2],
            vel: Vector2::new(v[3], v[4]),
            yaw_rate: v[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Agent state augmented with the commanded manipulation acceleration
/// `f_r_w / m`, constant across the horizon.
#[derive(Clone, Copy, Debug)]
pub struct AugmentedState(pub SVector<f64, NX>);

impl AugmentedState {
    pub fn new(state: &AgentState, f_r_world: Vector2<f64>, mass: f64) -> Self {
        let x = state.to_vector();
        let mut eta = SVector::<f64, NX>::zeros();
        eta.fixed_rows_mut::<6>(0).copy_from(&x);
        eta[6] = f_r_world.x / mass;
        eta[7] = f_r_world.y / mass;
        Self(eta)
    }
}

/// MPC tuning.
#[derive(Clone, Debug)]
pub struct MpcConfig {
    /// Horizon length, steps.
    pub horizon: usize,
    /// Prediction step, s.
    pub dt: f64,
    /// Diagonal state weights on `[px, py, yaw, vx, vy, yaw_rate]`.
    pub q_weights: Vector6<f64>,
    /// Diagonal input weights on `[ufx, ufy, um]`.
    pub r_weights: Vector3<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 2.0 / 150.0,
            // Light velocity weights: heavier ones overdamp station changes
            // into a multi-second creep.
            q_weights: Vector6::new(50.0, 50.0, 20.0, 1.0, 1.0, 2.0),
            r_weights: Vector3::new(1e-4, 1e-4, 1e-4),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        if self.horizon == 0 {
            return Err(MpcError::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(MpcError::InvalidConfig("dt must be positive".into()));
        }
        if self.q_weights.iter().any(|&w| w < 0.0) {
            return Err(MpcError::InvalidConfig("state weights must be >= 0".into()));
        }
        if self.r_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(MpcError::InvalidConfig("input weights must be > 0".into()));
        }
        Ok(())
    }
}

/// Continuous-time augmented dynamics `eta_dot = D_bar eta + G_bar u`.
///
/// Rows: position follows velocity, yaw follows yaw rate, velocity takes
/// `u_f / m` plus the reaction of the augmented force states, yaw rate takes
/// `u_m / I`. The augmentation rows are identically zero.
pub fn continuous_matrices(params: &AgentParams) -> (SMatrix<f64, NX, NX>, SMatrix<f64, NX, NU>) {
    let mut d = SMatrix::<f64, NX, NX>::zeros();
    d[(0, 3)] = 1.0;
    d[(1, 4)] = 1.0;
    d[(2, 5)] = 1.0;
    d[(3, 6)] = REACTION_SIGN;
    d[(4, 7)] = REACTION_SIGN;
    let mut g = SMatrix::<f64, NX, NU>::zeros();
    g[(3, 0)] = 1.0 / params.mass;
    g[(4, 1)] = 1.0 / params.mass;
    g[(5, 2)] = 1.0 / params.inertia;
    (d, g)
}

/// Exact zero-order-hold discretization via the exponential of the stacked
/// `[[D, G], [0, 0]]` block. `D` is nilpotent here so the series terminates.
pub fn discretize(
    d_bar: &SMatrix<f64, NX, NX>,
    g_bar: &SMatrix<f64, NX, NU>,
    dt: f64,
) -> (SMatrix<f64, NX, NX>, SMatrix<f64, NX, NU>) {
    assert!(dt > 0.0, "dt must be positive");
    const NZ: usize = NX + NU;
    let mut m = SMatrix::<f64, NZ, NZ>::zeros();
    m.fixed_view_mut::<NX, NX>(0, 0).copy_from(d_bar);
    m.fixed_view_mut::<NX, NU>(0, NX).copy_from(g_bar);
    let mdt = m * dt;
    let mut exp = SMatrix::<f64, NZ, NZ>::identity();
    let mut term = SMatrix::<f64, NZ, NZ>::identity();
    for k in 1..=NZ {
        term = (term * mdt) / (k as f64);
        if term.amax() == 0.0 {
            break;
        }
        exp += term;
    }
    (
        exp.fixed_view::<NX, NX>(0, 0).into_owned(),
        exp.fixed_view::<NX, NU>(0, NX).into_owned(),
    )
}

/// Reference state for an agent holding station at a contact: posed at the
/// contact point backed off by `standoff` along the inward normal, facing
/// the push direction, moving with the rigid-body velocity of that point.
pub fn desired_agent_state(
    object_state: &ObjectState,
    contact: &ContactSpec,
    d: f64,
    standoff: f64,
) -> AgentState {
    let r_body = contact.point(d) - standoff * contact.n_hat;
    let r = rot2(object_state.theta);
    let pos = object_state.x_p + r * r_body;
    let n_world = r * contact.n_hat;
    let yaw = n_world.y.atan2(n_world.x);
    let vel = object_state.v_p + object_state.omega * perp(r * r_body);
    AgentState {
        pos,
        yaw,
        vel,
        yaw_rate: object_state.omega,
    }
}

/// Constant-twist extrapolation of the contact reference over the horizon.
pub fn reference_horizon(
    object_state: &ObjectState,
    contact: &ContactSpec,
    d: f64,
    standoff: f64,
    horizon: usize,
    dt: f64,
) -> Vec<AgentState> {
    let base = desired_agent_state(object_state, contact, d, standoff);
    (1..=horizon)
        .map(|j| {
            let t = j as f64 * dt;
            AgentState {
                pos: base.pos + t * base.vel,
                yaw: base.yaw + t * base.yaw_rate,
                vel: base.vel,
                yaw_rate: base.yaw_rate,
            }
        })
        .collect()
}

/// Condense the horizon problem into a QP over the stacked inputs.
///
/// `refs` must hold `horizon` reference states (for steps `1..=horizon`).
pub fn build_condensed_qp(
    eta0: &AugmentedState,
    refs: &[AgentState],
    a_d: &SMatrix<f64, NX, NX>,
    b_d: &SMatrix<f64, NX, NU>,
    cfg: &MpcConfig,
    params: &AgentParams,
) -> Result<QpProblem, MpcError> {
    cfg.validate()?;
    params.validate()?;
    let k = cfg.horizon;
    if refs.len() != k {
        return Err(MpcError::InvalidConfig(format!(
            "expected {k} references, got {}",
            refs.len()
        )));
    }
    let (s_x, s_u) = prediction_matrices(a_d, b_d, k);

    // Q over the augmented state: tracking weights on the first 6 entries.
    let mut q_bar = nalgebra::DMatrix::zeros(NX * k, NX * k);
    let mut r_stack = nalgebra::DVector::zeros(NX * k);
    for j in 0..k {
        let ref_vec = refs[j].to_vector();
        for i in 0..6 {
            q_bar[(NX * j + i, NX * j + i)] = cfg.q_weights[i];
            r_stack[NX * j + i] = ref_vec[i];
        }
    }
    let mut r_bar = nalgebra::DMatrix::zeros(NU * k, NU * k);
    for j in 0..k {
        for i in 0..NU {
            r_bar[(NU * j + i, NU * j + i)] = cfg.r_weights[i];
        }
    }

    let eta0_d = nalgebra::DVector::from_iterator(NX, eta0.0.iter().copied());
    let free = &s_x * &eta0_d - &r_stack;
    let p = 2.0 * (s_u.transpose() * &q_bar * &s_u + r_bar);
    let c = 2.0 * s_u.transpose() * &q_bar * free;

    // Friction pyramid per step: |ufx|, |ufy| <= mu m g and |um| <= cap.
    let f_bound = params.traction_bound();
    let m_cap = params.moment_cap;
    let mut a_in = nalgebra::DMatrix::zeros(2 * NU * k, NU * k);
    let mut b_in = nalgebra::DVector::zeros(2 * NU * k);
    for j in 0..k {
        for i in 0..NU {
            let bound = if i < 2 { f_bound } else { m_cap };
            a_in[(2 * (NU * j + i), NU * j + i)] = 1.0;
            b_in[2 * (NU * j + i)] = bound;
            a_in[(2 * (NU * j + i) + 1, NU * j + i)] = -1.0;
            b_in[2 * (NU * j + i) + 1] = bound;
        }
    }

    Ok(QpProblem::new(
        p,
        c,
        nalgebra::DMatrix::zeros(0, NU * k),
        nalgebra::DVector::zeros(0),
        a_in,
        b_in,
    )?)
}

/// Stacked prediction matrices: `eta_{1..k} = S_x eta_0 + S_u U`.
fn prediction_matrices(
    a_d: &SMatrix<f64, NX, NX>,
    b_d: &SMatrix<f64, NX, NU>,
    k: usize,
) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
    let mut s_x = nalgebra::DMatrix::zeros(NX * k, NX);
    let mut s_u = nalgebra::DMatrix::zeros(NX * k, NU * k);
    let mut a_pow = *a_d;
    for i in 0..k {
        for r in 0..NX {
            for c in 0..NX {
                s_x[(NX * i + r, c)] = a_pow[(r, c)];
            }
        }
        if i + 1 < k {
            a_pow = a_d * a_pow;
        }
    }
    // Column block j of S_u at row block i is A^{i-j-1} B.
    for j in 0..k {
        let mut block = *b_d;
        for i in j..k {
            for r in 0..NX {
                for c in 0..NU {
                    s_u[(NX * i + r, NU * j + c)] = block[(r, c)];
                }
            }
            if i + 1 < k {
                block = a_d * block;
            }
        }
    }
    (s_x, s_u)
}

/// Output of one MPC tick.
#[derive(Clone, Debug)]
pub struct MpcOutput {
    /// First input of the horizon solution: `[ufx, ufy, um]`.
    pub u: Vector3<f64>,
    /// Predicted agent trajectory over the horizon.
    pub predicted: Vec<AgentState>,
    /// Whether any input bound is active at the first step.
    pub saturated: bool,
    /// True when the QP failed and the previous input was reused.
    pub fallback: bool,
}

/// Per-agent receding-horizon controller with warm start and input hold.
#[derive(Clone, Debug)]
pub struct AgentMpc {
    pub params: AgentParams,
    pub cfg: MpcConfig,
    a_d: SMatrix<f64, NX, NX>,
    b_d: SMatrix<f64, NX, NU>,
    warm: Vec<usize>,
    prev_u: Vector3<f64>,
}

impl AgentMpc {
    pub fn new(params: AgentParams, cfg: MpcConfig) -> Result<Self, MpcError> {
        params.validate()?;
        cfg.validate()?;
        let (d_bar, g_bar) = continuous_matrices(&params);
        let (a_d, b_d) = discretize(&d_bar, &g_bar, cfg.dt);
        Ok(Self {
            params,
            cfg,
            a_d,
            b_d,
            warm: Vec::new(),
            prev_u: Vector3::zeros(),
        })
    }

    /// Update the traction bound for the terrain currently under the agent.
    pub fn set_ground_friction(&mut self, mu: f64) {
        self.params.mu_ground = mu.max(1e-6);
    }

    pub fn discrete_matrices(&self) -> (&SMatrix<f64, NX, NX>, &SMatrix<f64, NX, NU>) {
        (&self.a_d, &self.b_d)
    }

    /// Solve one receding-horizon step and return the first input.
    pub fn mpc_step(
        &mut self,
        state: &AgentState,
        f_r_cmd_world: Vector2<f64>,
        refs: &[AgentState],
    ) -> MpcOutput {
        let eta0 = AugmentedState::new(state, f_r_cmd_world, self.params.mass);
        // Unwrap reference yaws around the agent's current yaw so the linear
        // cost sees the short way round.
        let refs: Vec<AgentState> = refs
            .iter()
            .map(|r| {
                let mut r = *r;
                r.yaw = state.yaw + wrap_angle(r.yaw - state.yaw);
                r
            })
            .collect();
        let problem = match build_condensed_qp(
            &eta0,
            &refs,
            &self.a_d,
            &self.b_d,
            &self.cfg,
            &self.params,
        ) {
            Ok(p) => p,
            Err(_) => {
                return MpcOutput {
                    u: self.prev_u,
                    predicted: vec![*state; self.cfg.horizon],
                    saturated: false,
                    fallback: true,
                }
            }
        };
        let warm = (!self.warm.is_empty()).then_some(self.warm.as_slice());
        let sol = qp::solve(&problem, warm);
        if sol.status != QpStatus::Optimal {
            return MpcOutput {
                u: self.prev_u,
                predicted: vec![*state; self.cfg.horizon],
                saturated: false,
                fallback: true,
            };
        }
        self.warm = sol.active_set.clone();
        let u = Vector3::new(sol.x[0], sol.x[1], sol.x[2]);
        self.prev_u = u;

        let f_bound = self.params.traction_bound();
        let saturated = u.x.abs() >= f_bound - 1e-9
            || u.y.abs() >= f_bound - 1e-9
            || u.z.abs() >= self.params.moment_cap - 1e-9;

        let mut predicted = Vec::with_capacity(self.cfg.horizon);
        let mut eta = eta0.0;
        for j in 0..self.cfg.horizon {
            let uj = Vector3::new(sol.x[NU * j], sol.x[NU * j + 1], sol.x[NU * j + 2]);
            eta = self.a_d * eta + self.b_d * SVector::<f64, NU>::from_iterator(uj.iter().copied());
            predicted.push(AgentState::from_vector(
                &eta.fixed_rows::<6>(0).into_owned(),
            ));
        }
        MpcOutput {
            u,
            predicted,
            saturated,
            fallback: false,
        }
    }
}

/// Advance the agent's physical state one step under the applied input and
/// the reaction of the force it actually transmits (semi-implicit Euler).
pub fn agent_step(
    state: &AgentState,
    params: &AgentParams,
    u: &Vector3<f64>,
    transmitted_force_world: Vector2<f64>,
    dt: f64,
) -> AgentState {
    let accel = (Vector2::new(u.x, u.y) + REACTION_SIGN * transmitted_force_world) / params.mass;
    let yaw_accel = u.z / params.inertia;
    let vel = state.vel + dt * accel;
    let yaw_rate = state.yaw_rate + dt * yaw_accel;
    AgentState {
        pos: state.pos + dt * vel,
        yaw: wrap_angle(state.yaw + dt * yaw_rate),
        vel,
        yaw_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn params() -> AgentParams {
        AgentParams::default()
    }

    #[test]
    fn augmentation_rows_are_zero() {
        let (d, g) = continuous_matrices(&params());
        for r in 6..8 {
            for c in 0..8 {
                assert_eq!(d[(r, c)], 0.0);
            }
            for c in 0..3 {
                assert_eq!(g[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn unit_force_accelerates_by_inverse_mass() {
        let p = AgentParams {
            mass: 12.0,
            ..params()
        };
        let (_, g) = continuous_matrices(&p);
        assert_relative_eq!(g[(3, 0)], 1.0 / 12.0, epsilon = 1e-15);
        assert_relative_eq!(g[(4, 1)], 1.0 / 12.0, epsilon = 1e-15);
    }

    #[test]
    fn augmented_force_reacts_on_agent() {
        let (d, _) = continuous_matrices(&params());
        let mut eta = SVector::<f64, NX>::zeros();
        eta[6] = 1.0; // f_r_w / m = (1, 0)
        let etadot = d * eta;
        assert_relative_eq!(etadot[3], -1.0, epsilon = 1e-15);
        assert_relative_eq!(etadot[4], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn discretize_zero_dynamics() {
        let d = SMatrix::<f64, NX, NX>::zeros();
        let (_, g) = continuous_matrices(&params());
        let dt = 0.02;
        let (a_d, b_d) = discretize(&d, &g, dt);
        assert_relative_eq!(a_d, SMatrix::<f64, NX, NX>::identity(), epsilon = 1e-15);
        assert_relative_eq!(b_d, g * dt, epsilon = 1e-15);
    }

    #[test]
    fn discretize_double_integrator_gains() {
        let p = params();
        let (d, g) = continuous_matrices(&p);
        let dt = 0.05;
        let (a_d, b_d) = discretize(&d, &g, dt);
        assert_relative_eq!(a_d[(0, 3)], dt, epsilon = 1e-15);
        assert_relative_eq!(b_d[(0, 0)], 0.5 * dt * dt / p.mass, epsilon = 1e-15);
        assert_relative_eq!(b_d[(3, 0)], dt / p.mass, epsilon = 1e-15);
        // Augmented coupling integrates into position like a disturbance.
        assert_relative_eq!(a_d[(0, 6)], REACTION_SIGN * 0.5 * dt * dt, epsilon = 1e-15);
        assert_relative_eq!(a_d[(3, 6)], REACTION_SIGN * dt, epsilon = 1e-15);
    }

    #[test]
    fn discretization_matches_rk4_oracle() {
        let p = params();
        let (d, g) = continuous_matrices(&p);
        let dt = 0.01;
        let (a_d, b_d) = discretize(&d, &g, dt);
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let eta = SVector::<f64, NX>::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let u = SVector::<f64, NU>::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let f = |x: &SVector<f64, NX>| d * x + g * u;
            let k1 = f(&eta);
            let k2 = f(&(eta + 0.5 * dt * k1));
            let k3 = f(&(eta + 0.5 * dt * k2));
            let k4 = f(&(eta + dt * k3));
            let rk4 = eta + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            let zoh = a_d * eta + b_d * u;
            assert!((rk4 - zoh).amax() < 1e-10);
        }
    }

    fn rear_contact() -> ContactSpec {
        ContactSpec {
            r_0: Vector2::new(-0.5, 0.0),
            n_hat: Vector2::new(1.0, 0.0),
            t_hat: Vector2::new(0.0, 1.0),
            d_min: -0.2,
            d_max: 0.2,
            active: true,
        }
    }

    #[test]
    fn desired_state_direct_construction() {
        let obj = ObjectState::at_rest(Vector2::zeros(), 0.0);
        let c = rear_contact();
        let r = desired_agent_state(&obj, &c, 0.0, 0.05);
        assert_relative_eq!(r.pos, Vector2::new(-0.55, 0.0), epsilon = 1e-12);
        assert_relative_eq!(r.yaw, 0.0, epsilon = 1e-12);
        assert_eq!(r.vel, Vector2::zeros());
    }

    #[test]
    fn desired_state_rotating_object() {
        let obj = ObjectState {
            x_p: Vector2::zeros(),
            theta: 0.0,
            v_p: Vector2::zeros(),
            omega: 1.0,
        };
        let mut c = rear_contact();
        c.r_0 = Vector2::new(-0.45, 0.0);
        let r = desired_agent_state(&obj, &c, 0.0, 0.05);
        // Point at radius 0.5 moving tangentially at omega * r.
        assert_relative_eq!(r.vel.norm(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.vel.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(r.vel.y, -0.5, epsilon = 1e-12);
        assert_relative_eq!(r.yaw_rate, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn desired_state_slide_shift() {
        let obj = ObjectState::at_rest(Vector2::zeros(), 0.0);
        let c = rear_contact();
        let r0 = desired_agent_state(&obj, &c, 0.0, 0.05);
        let r1 = desired_agent_state(&obj, &c, 0.1, 0.05);
        assert_relative_eq!(r1.pos - r0.pos, Vector2::new(0.0, 0.1), epsilon = 1e-12);
    }

    #[test]
    fn condensed_prediction_matches_rollout() {
        let p = params();
        let cfg = MpcConfig {
            horizon: 2,
            ..MpcConfig::default()
        };
        let (d, g) = continuous_matrices(&p);
        let (a_d, b_d) = discretize(&d, &g, cfg.dt);
        let (s_x, s_u) = prediction_matrices(&a_d, &b_d, cfg.horizon);
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let eta0 = SVector::<f64, NX>::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let u0 = SVector::<f64, NU>::from_fn(|_, _| rng.random_range(-10.0..10.0));
            let u1 = SVector::<f64, NU>::from_fn(|_, _| rng.random_range(-10.0..10.0));
            let eta1 = a_d * eta0 + b_d * u0;
            let eta2 = a_d * eta1 + b_d * u1;
            let eta0_d = nalgebra::DVector::from_iterator(NX, eta0.iter().copied());
            let mut u_stack = nalgebra::DVector::zeros(2 * NU);
            for i in 0..NU {
                u_stack[i] = u0[i];
                u_stack[NU + i] = u1[i];
            }
            let pred = &s_x * eta0_d + &s_u * u_stack;
            for i in 0..NX {
                assert!((pred[i] - eta1[i]).abs() < 1e-12);
                assert!((pred[NX + i] - eta2[i]).abs() < 1e-12);
            }
        }
    }

    // The condensed quadratic must equal the rollout cost up to the constant
    // J(0): J(U) = 1/2 U' P U + c' U + J(0).
    #[test]
    fn condensed_cost_matches_rollout_cost() {
        let p = params();
        let cfg = MpcConfig {
            horizon: 4,
            ..MpcConfig::default()
        };
        let (d, g) = continuous_matrices(&p);
        let (a_d, b_d) = discretize(&d, &g, cfg.dt);
        let mut rng = StdRng::seed_from_u64(6);
        let state = AgentState {
            pos: Vector2::new(0.3, -0.2),
            yaw: 0.4,
            vel: Vector2::new(0.1, 0.0),
            yaw_rate: -0.05,
        };
        let refs: Vec<AgentState> = (0..cfg.horizon)
            .map(|j| AgentState {
                pos: Vector2::new(0.01 * j as f64, 0.0),
                yaw: 0.0,
                vel: Vector2::zeros(),
                yaw_rate: 0.0,
            })
            .collect();
        let eta0 = AugmentedState::new(&state, Vector2::new(4.0, -2.0), p.mass);
        let problem = build_condensed_qp(&eta0, &refs, &a_d, &b_d, &cfg, &p).unwrap();

        let rollout_cost = |u_stack: &nalgebra::DVector<f64>| -> f64 {
            let mut eta = eta0.0;
            let mut cost = 0.0;
            for j in 0..cfg.horizon {
                let uj =
                    SVector::<f64, NU>::from_iterator((0..NU).map(|i| u_stack[NU * j + i]));
                eta = a_d * eta + b_d * uj;
                let xerr = eta.fixed_rows::<6>(0) - refs[j].to_vector();
                for i in 0..6 {
                    cost += cfg.q_weights[i] * xerr[i] * xerr[i];
                }
                for i in 0..NU {
                    cost += cfg.r_weights[i] * uj[i] * uj[i];
                }
            }
            cost
        };
        let zero = nalgebra::DVector::zeros(NU * cfg.horizon);
        let j0 = rollout_cost(&zero);
        for _ in 0..10 {
            let u =
                nalgebra::DVector::from_fn(NU * cfg.horizon, |_, _| rng.random_range(-20.0..20.0));
            let qp_val = 0.5 * (u.transpose() * problem.p() * &u)[0] + problem.c().dot(&u);
            let roll = rollout_cost(&u);
            assert!(
                (qp_val + j0 - roll).abs() < 1e-10 * (1.0 + roll.abs()),
                "qp {qp_val} + j0 {j0} vs rollout {roll}"
            );
        }
    }

    #[test]
    fn zero_tracking_incentive_gives_zero_input() {
        let p = params();
        let cfg = MpcConfig {
            horizon: 1,
            q_weights: Vector6::zeros(),
            ..MpcConfig::default()
        };
        let state = AgentState::at_rest(Vector2::new(1.0, 1.0), 0.3);
        let refs = vec![AgentState::at_rest(Vector2::zeros(), 0.0)];
        let mut mpc = AgentMpc::new(p, cfg).unwrap();
        let out = mpc.mpc_step(&state, Vector2::zeros(), &refs);
        assert!(!out.fallback);
        assert!(out.u.amax() < 1e-10);
    }

    #[test]
    fn on_reference_equilibrium_is_stationary() {
        let p = params();
        let cfg = MpcConfig::default();
        let state = AgentState::at_rest(Vector2::new(-0.55, 0.0), 0.0);
        let refs = vec![state; cfg.horizon];
        let mut mpc = AgentMpc::new(p, cfg).unwrap();
        let out = mpc.mpc_step(&state, Vector2::zeros(), &refs);
        assert!(!out.fallback);
        assert!(out.u.amax() < 1e-8, "u = {:?}", out.u);
    }

    // Holding station against a constant transmitted force: at the
    // receding-horizon fixpoint the input must exactly cancel the reaction.
    #[test]
    fn constant_manipulation_force_is_compensated() {
        let p = params();
        let cfg = MpcConfig::default();
        let hold = AgentState::at_rest(Vector2::new(-0.55, 0.0), 0.0);
        let f_cmd = Vector2::new(10.0, 0.0);
        let mut mpc = AgentMpc::new(p, cfg.clone()).unwrap();
        let mut state = hold;
        let mut u = Vector3::zeros();
        for _ in 0..(4.0 / cfg.dt) as usize {
            let refs = vec![hold; cfg.horizon];
            let out = mpc.mpc_step(&state, f_cmd, &refs);
            assert!(!out.fallback);
            u = out.u;
            state = agent_step(&state, &p, &u, f_cmd, cfg.dt);
        }
        assert_relative_eq!(u.x, 10.0, epsilon = 1e-3);
        assert_relative_eq!(u.y, 0.0, epsilon = 1e-6);
        // No integral action: the agent parks with a small proportional
        // offset, at rest.
        assert!(state.vel.norm() < 1e-4, "residual velocity {:?}", state.vel);
        assert!((state.pos - hold.pos).norm() < 0.05);
    }

    #[test]
    fn friction_bounds_hold_for_aggressive_commands() {
        let p = params();
        let f_bound = p.traction_bound();
        let cfg = MpcConfig::default();
        let mut mpc = AgentMpc::new(p, cfg.clone()).unwrap();
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..50 {
            let state = AgentState {
                pos: Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                yaw: rng.random_range(-3.0..3.0),
                vel: Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                yaw_rate: rng.random_range(-2.0..2.0),
            };
            let refs = vec![AgentState::at_rest(Vector2::zeros(), 0.0); cfg.horizon];
            let f_cmd = Vector2::new(
                rng.random_range(-200.0..200.0),
                rng.random_range(-200.0..200.0),
            );
            let out = mpc.mpc_step(&state, f_cmd, &refs);
            assert!(!out.fallback);
            assert!(out.u.x.abs() <= f_bound + 1e-9);
            assert!(out.u.y.abs() <= f_bound + 1e-9);
            assert!(out.u.z.abs() <= mpc.params.moment_cap + 1e-9);
        }
    }

    #[test]
    fn zero_augmentation_reduces_to_plain_tracking() {
        let p = params();
        let (d, g) = continuous_matrices(&p);
        let (a_d, b_d) = discretize(&d, &g, 0.02);
        let x0 = Vector6::new(0.2, -0.1, 0.3, 0.05, 0.0, -0.02);
        let u = Vector3::new(3.0, -1.0, 0.2);
        // Augmented rollout with zero force states.
        let mut eta = SVector::<f64, NX>::zeros();
        eta.fixed_rows_mut::<6>(0).copy_from(&x0);
        let eta1 = a_d * eta + b_d * SVector::<f64, NU>::from_iterator(u.iter().copied());
        // Plain 6-state rollout with the corresponding sub-blocks.
        let a6 = a_d.fixed_view::<6, 6>(0, 0).into_owned();
        let b6 = b_d.fixed_view::<6, 3>(0, 0).into_owned();
        let x1 = a6 * x0 + b6 * u;
        assert!((eta1.fixed_rows::<6>(0) - x1).amax() < 1e-14);
        assert_eq!(eta1[6], 0.0);
        assert_eq!(eta1[7], 0.0);
    }

    #[test]
    fn step_reference_settles_within_two_seconds() {
        let p = params();
        let cfg = MpcConfig::default();
        let dt = cfg.dt;
        let mut mpc = AgentMpc::new(p, cfg.clone()).unwrap();
        let target = AgentState::at_rest(Vector2::new(0.1, 0.0), 0.0);
        let mut state = AgentState::at_rest(Vector2::zeros(), 0.0);
        let steps = (2.0 / dt).ceil() as usize;
        let mut settled_at = None;
        for k in 0..steps {
            let refs = vec![target; cfg.horizon];
            let out = mpc.mpc_step(&state, Vector2::zeros(), &refs);
            assert!(!out.fallback);
            // Linear model rollout, no disturbance.
            state = agent_step(&state, &p, &out.u, Vector2::zeros(), dt);
            let err = (state.pos - target.pos).norm();
            if err < 1e-3 && settled_at.is_none() {
                settled_at = Some(k as f64 * dt);
            }
        }
        let err = (state.pos - target.pos).norm();
        assert!(err < 1e-3, "final error {err}");
        assert!(settled_at.expect("never settled") < 2.0);
    }
}
