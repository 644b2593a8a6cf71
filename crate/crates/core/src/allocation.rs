//! Distribution of the commanded object wrench across agent contacts.
//!
//! Each agent pushes along its face normal with magnitude `F_i >= 0` from a
//! contact point it can slide along the face (`d_i` within bounds). The
//! balance constraints contain the product `F_i d_i`, so the program is
//! convexified with the substitution `u_i = F_i d_i`:
//!
//! ```text
//! minimize   g1 |F|^2 + g2 |F - F_prev|^2 + g3 |u - d_prev . F|^2
//! subject to sum_i F_i n_i                           = R' F_world  (force, body frame)
//!            sum_i F_i (r0_i x n_i) + u_i (t_i x n_i) = M_p        (moment)
//!            F_i >= 0,  d_min_i F_i <= u_i <= d_max_i F_i
//! ```
//!
//! Slides are recovered as `d_i = u_i / F_i` above a small force threshold.
//! If the balance is unachievable (push-only contacts cannot realize every
//! wrench) the equalities move into the cost with a large weight and the
//! result is flagged [`AllocationStatus::Relaxed`].
//!
//! The heuristic baseline sets every slide open loop from the yaw error,
//! deliberately without clamping, and only solves for the magnitudes.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use thiserror::Error;

use crate::dynamics::{cross2, rot2, ContactSpec, Wrench};
use crate::qp::{self, QpProblem, QpStatus};
use crate::wrap_angle;

const RELAX_WEIGHT: f64 = 1e4;
const U_REGULARIZATION: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("no active contacts")]
    NoActiveContacts,
    #[error("invalid allocator config: {0}")]
    InvalidConfig(String),
    #[error("contact {0}: {1}")]
    InvalidContact(usize, crate::dynamics::DynamicsError),
    #[error(transparent)]
    Qp(#[from] qp::QpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AllocationStatus {
    /// Balance constraints hold exactly (within solver tolerance).
    Optimal,
    /// Equalities were soft-enforced; `residual_wrench` carries the gap.
    Relaxed,
}

/// Cost weights and the slide-recovery force threshold.
#[derive(Clone, Copy, Debug)]
pub struct AllocatorConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// Below this force the slide is held at its previous value, N.
    pub f_eps: f64,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            gamma1: 1.0,
            gamma2: 0.1,
            gamma3: 10.0,
            f_eps: 0.1,
        }
    }
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<(), AllocationError> {
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0 && self.gamma3 >= 0.0) {
            return Err(AllocationError::InvalidConfig(
                "weights must be nonnegative".into(),
            ));
        }
        if !(self.gamma1 + self.gamma2 > 0.0) {
            return Err(AllocationError::InvalidConfig(
                "gamma1 + gamma2 must be positive".into(),
            ));
        }
        if !(self.f_eps > 0.0) {
            return Err(AllocationError::InvalidConfig("f_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-agent force magnitudes and slide positions for one tick.
#[derive(Clone, Debug)]
pub struct Allocation {
    /// Force magnitude per contact, N; zero for inactive contacts.
    pub f_r: Vec<f64>,
    /// Slide position per contact, m.
    pub d: Vec<f64>,
    /// Equality residual in the body frame (force rows, moment row).
    pub residual_wrench: Wrench,
    pub status: AllocationStatus,
    /// QP active set over the stacked `[F; u]` variables, for warm starts.
    pub qp_active_set: Vec<usize>,
    /// Number of active contacts the warm set refers to.
    pub n_active: usize,
}

impl Allocation {
    /// All-zero allocation used before the first solve.
    pub fn initial(n_contacts: usize) -> Self {
        Self {
            f_r: vec![0.0; n_contacts],
            d: vec![0.0; n_contacts],
            residual_wrench: Wrench::zero(),
            status: AllocationStatus::Optimal,
            qp_active_set: Vec::new(),
            n_active: 0,
        }
    }
}

struct BalanceRows {
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
}

/// Equality rows over `z = [F; u]` (or just `F`) for the active contacts.
fn balance_rows(
    f_world: Vector2<f64>,
    m_p: f64,
    theta: f64,
    contacts: &[ContactSpec],
    active: &[usize],
    with_u: bool,
) -> BalanceRows {
    let n_a = active.len();
    let nz = if with_u { 2 * n_a } else { n_a };
    let mut a_eq = DMatrix::zeros(3, nz);
    for (k, &i) in active.iter().enumerate() {
        let c = &contacts[i];
        a_eq[(0, k)] = c.n_hat.x;
        a_eq[(1, k)] = c.n_hat.y;
        a_eq[(2, k)] = cross2(c.r_0, c.n_hat);
        if with_u {
            a_eq[(2, n_a + k)] = cross2(c.t_hat, c.n_hat);
        }
    }
    let f_body = rot2(theta).transpose() * f_world;
    let b_eq = DVector::from_vec(vec![f_body.x, f_body.y, m_p]);
    BalanceRows { a_eq, b_eq }
}

/// Build the convexified allocation QP over `z = [F; u]` for the active
/// contacts. Inactive contacts are excluded (their force is fixed at zero).
pub fn build_allocation_qp(
    f_world: Vector2<f64>,
    m_p: f64,
    theta: f64,
    contacts: &[ContactSpec],
    prev: &Allocation,
    cfg: &AllocatorConfig,
) -> Result<(QpProblem, Vec<usize>), AllocationError> {
    cfg.validate()?;
    let active = active_indices(contacts)?;
    let n_a = active.len();
    let nz = 2 * n_a;

    let mut p = DMatrix::zeros(nz, nz);
    let mut c = DVector::zeros(nz);
    for (k, &i) in active.iter().enumerate() {
        let d_prev = prev.d.get(i).copied().unwrap_or(0.0);
        let f_prev = prev.f_r.get(i).copied().unwrap_or(0.0);
        p[(k, k)] = 2.0 * (cfg.gamma1 + cfg.gamma2 + cfg.gamma3 * d_prev * d_prev);
        p[(k, n_a + k)] = -2.0 * cfg.gamma3 * d_prev;
        p[(n_a + k, k)] = -2.0 * cfg.gamma3 * d_prev;
        p[(n_a + k, n_a + k)] = 2.0 * (cfg.gamma3 + U_REGULARIZATION);
        c[k] = -2.0 * cfg.gamma2 * f_prev;
    }

    let rows = balance_rows(f_world, m_p, theta, contacts, &active, true);

    // F_i >= 0 and d_min F_i <= u_i <= d_max F_i.
    let mut a_in = DMatrix::zeros(3 * n_a, nz);
    let b_in = DVector::zeros(3 * n_a);
    for (k, &i) in active.iter().enumerate() {
        let ct = &contacts[i];
        a_in[(k, k)] = -1.0;
        a_in[(n_a + k, n_a + k)] = 1.0;
        a_in[(n_a + k, k)] = -ct.d_max;
        a_in[(2 * n_a + k, n_a + k)] = -1.0;
        a_in[(2 * n_a + k, k)] = ct.d_min;
    }

    let problem = QpProblem::new(p, c, rows.a_eq, rows.b_eq, a_in, b_in)?;
    Ok((problem, active))
}

fn active_indices(contacts: &[ContactSpec]) -> Result<Vec<usize>, AllocationError> {
    for (i, c) in contacts.iter().enumerate() {
        c.validate()
            .map_err(|e| AllocationError::InvalidContact(i, e))?;
    }
    let active: Vec<usize> = contacts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.active)
        .map(|(i, _)| i)
        .collect();
    if active.is_empty() {
        return Err(AllocationError::NoActiveContacts);
    }
    Ok(active)
}

/// Solve the force/slide distribution for one tick.
pub fn allocate(
    f_world: Vector2<f64>,
    m_p: f64,
    theta: f64,
    contacts: &[ContactSpec],
    prev: &Allocation,
    cfg: &AllocatorConfig,
) -> Result<Allocation, AllocationError> {
    let (problem, active) = build_allocation_qp(f_world, m_p, theta, contacts, prev, cfg)?;
    let n_a = active.len();
    let warm = (prev.n_active == n_a && !prev.qp_active_set.is_empty())
        .then_some(prev.qp_active_set.as_slice());
    let sol = qp::solve(&problem, warm);

    let (z, status, active_set) = if sol.status == QpStatus::Optimal {
        (sol.x, AllocationStatus::Optimal, sol.active_set)
    } else {
        let relaxed = relax_equalities(&problem)?;
        let rsol = qp::solve(&relaxed, None);
        (rsol.x, AllocationStatus::Relaxed, rsol.active_set)
    };

    let mut f_r = vec![0.0; contacts.len()];
    let mut d = prev.d.clone();
    d.resize(contacts.len(), 0.0);
    for (k, &i) in active.iter().enumerate() {
        let f = z[k];
        f_r[i] = f;
        if f > cfg.f_eps {
            d[i] = (z[n_a + k] / f).clamp(contacts[i].d_min, contacts[i].d_max);
        }
        // else: hold the previous slide; u/F is ill-conditioned near zero.
    }

    let residual = equality_residual(f_world, m_p, theta, contacts, &active, &z, true);
    Ok(Allocation {
        f_r,
        d,
        residual_wrench: residual,
        status,
        qp_active_set: active_set,
        n_active: n_a,
    })
}

/// Baseline from the yaw-error policy: every slide is set open loop to
/// `k_p_d * (theta_d - theta)` without clamping, and only the force
/// magnitudes are optimized with the slides frozen.
#[allow(clippy::too_many_arguments)]
pub fn heuristic_allocate(
    f_world: Vector2<f64>,
    m_p: f64,
    theta: f64,
    theta_d: f64,
    contacts: &[ContactSpec],
    prev: &Allocation,
    k_p_d: f64,
    cfg: &AllocatorConfig,
) -> Result<Allocation, AllocationError> {
    cfg.validate()?;
    let active = active_indices(contacts)?;
    let n_a = active.len();
    let d_cmd = k_p_d * wrap_angle(theta_d - theta);

    let mut p = DMatrix::zeros(n_a, n_a);
    let mut c = DVector::zeros(n_a);
    for (k, &i) in active.iter().enumerate() {
        let f_prev = prev.f_r.get(i).copied().unwrap_or(0.0);
        p[(k, k)] = 2.0 * (cfg.gamma1 + cfg.gamma2);
        c[k] = -2.0 * cfg.gamma2 * f_prev;
    }

    // Moment arms use the shifted contact points r_0 + d t.
    let mut a_eq = DMatrix::zeros(3, n_a);
    for (k, &i) in active.iter().enumerate() {
        let ct = &contacts[i];
        a_eq[(0, k)] = ct.n_hat.x;
        a_eq[(1, k)] = ct.n_hat.y;
        a_eq[(2, k)] = cross2(ct.point(d_cmd), ct.n_hat);
    }
    let f_body = rot2(theta).transpose() * f_world;
    let b_eq = DVector::from_vec(vec![f_body.x, f_body.y, m_p]);

    let mut a_in = DMatrix::zeros(n_a, n_a);
    for k in 0..n_a {
        a_in[(k, k)] = -1.0;
    }
    let b_in = DVector::zeros(n_a);

    let problem = QpProblem::new(p, c, a_eq, b_eq, a_in, b_in)?;
    let sol = qp::solve(&problem, None);
    let (z, status, active_set) = if sol.status == QpStatus::Optimal {
        (sol.x, AllocationStatus::Optimal, sol.active_set)
    } else {
        let relaxed = relax_equalities(&problem)?;
        let rsol = qp::solve(&relaxed, None);
        (rsol.x, AllocationStatus::Relaxed, rsol.active_set)
    };

    let mut f_r = vec![0.0; contacts.len()];
    for (k, &i) in active.iter().enumerate() {
        f_r[i] = z[k];
    }
    let d = vec![d_cmd; contacts.len()];
    let residual = equality_residual(f_world, m_p, theta, contacts, &active, &z, false);
    Ok(Allocation {
        f_r,
        d,
        residual_wrench: residual,
        status,
        qp_active_set: active_set,
        n_active: n_a,
    })
}

/// Move the equality rows into the cost with weight [`RELAX_WEIGHT`].
fn relax_equalities(problem: &QpProblem) -> Result<QpProblem, AllocationError> {
    let a = problem.a_eq();
    let b = problem.b_eq();
    let p = problem.p() + 2.0 * RELAX_WEIGHT * a.transpose() * a;
    let c = problem.c() - 2.0 * RELAX_WEIGHT * a.transpose() * b;
    let n = problem.n();
    Ok(QpProblem::new(
        p,
        c,
        DMatrix::zeros(0, n),
        DVector::zeros(0),
        problem.a_in().clone(),
        problem.b_in().clone(),
    )?)
}

fn equality_residual(
    f_world: Vector2<f64>,
    m_p: f64,
    theta: f64,
    contacts: &[ContactSpec],
    active: &[usize],
    z: &DVector<f64>,
    with_u: bool,
) -> Wrench {
    let rows = balance_rows(f_world, m_p, theta, contacts, active, with_u);
    let r = rows.a_eq * z - rows.b_eq;
    Wrench::from_vector(&Vector3::new(r[0], r[1], r[2]))
}

/// Achieved force in the world frame: `R * sum_i F_i n_i`.
pub fn achieved_force_world(
    theta: f64,
    contacts: &[ContactSpec],
    alloc: &Allocation,
) -> Vector2<f64> {
    let mut f_body = Vector2::zeros();
    for (i, c) in contacts.iter().enumerate() {
        if c.active {
            f_body += alloc.f_r[i] * c.n_hat;
        }
    }
    rot2(theta) * f_body
}

/// Unique force magnitudes satisfying the two force rows for a pair of
/// non-parallel normals. Oracle helper.
pub fn two_contact_force_solution(
    f_body: Vector2<f64>,
    n1: Vector2<f64>,
    n2: Vector2<f64>,
) -> Option<Vector2<f64>> {
    let m = Matrix2::from_columns(&[n1, n2]);
    m.try_inverse().map(|inv| inv * f_body)
}
