//! Built-in invariant suites behind the `selftest` subcommand.
//!
//! Each check prints one PASS/FAIL line; the runner returns how many failed.
//! These duplicate the spirit of the test suite in a form that ships with
//! the binary, so a deployed build can be sanity-checked in place.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use comanip_core::adaptive::regressor_theta;
use comanip_core::allocation::{allocate, Allocation, AllocatorConfig};
use comanip_core::dynamics::{
    coriolis_matrix, coriolis_vector, cross2, h_prime, mass_matrix, rot2, rotation, ContactSpec,
    FrictionMap, ObjectParams,
};
use comanip_core::mpc::{continuous_matrices, discretize, AgentParams};
use comanip_core::qp::{self, QpProblem, QpStatus};

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_params(rng: &mut StdRng) -> ObjectParams {
    ObjectParams {
        mass: rng.random_range(0.5..20.0),
        inertia_com: rng.random_range(0.05..2.0),
        r_p: Vector2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
        half_extents: Vector2::new(0.5, 0.4),
        mu: FrictionMap::uniform(0.0),
        rho_eff: 0.2,
        gravity: 9.81,
    }
}

fn check_rotation_and_mass_matrix(rng: &mut StdRng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let theta = rng.random_range(-6.0..6.0);
        let r = rotation(theta);
        worst = worst.max((r * r.transpose() - nalgebra::Matrix3::identity()).amax());
        worst = worst.max((r.determinant() - 1.0).abs());
        let p = random_params(rng);
        match mass_matrix(&p, theta) {
            Ok(h) => {
                let min_eig = h
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                if min_eig <= 0.0 {
                    return CheckResult {
                        name: "rotation/mass-matrix positive definiteness",
                        passed: false,
                        detail: format!("non-PD mass matrix (min eig {min_eig:e})"),
                    };
                }
            }
            Err(e) => {
                return CheckResult {
                    name: "rotation/mass-matrix positive definiteness",
                    passed: false,
                    detail: e.to_string(),
                }
            }
        }
    }
    CheckResult {
        name: "rotation/mass-matrix positive definiteness",
        passed: worst < 1e-12,
        detail: format!("worst orthonormality defect {worst:.2e}"),
    }
}

fn check_skew_symmetry(rng: &mut StdRng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = random_params(rng);
        let theta = rng.random_range(-6.0..6.0);
        let omega = rng.random_range(-3.0..3.0);
        let qdot = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            omega,
        );
        let s = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let h_dot = omega * h_prime(&p, theta);
        let c = coriolis_matrix(&p, theta, &qdot);
        worst = worst.max((s.transpose() * (h_dot - 2.0 * c) * s)[0].abs());
    }
    CheckResult {
        name: "skew symmetry of Hdot - 2C",
        passed: worst < 1e-9,
        detail: format!("worst |s'(Hdot-2C)s| = {worst:.2e}"),
    }
}

fn check_regressor_identity(rng: &mut StdRng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = random_params(rng);
        let theta = rng.random_range(-6.0..6.0);
        let qdot = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-3.0..3.0),
        );
        let qdot_r = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-3.0..3.0),
        );
        let qddot_r = Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let y = regressor_theta(theta, qdot.z, &qdot_r, &qddot_r);
        let h = mass_matrix(&p, theta).expect("valid params");
        let c = coriolis_matrix(&p, theta, &qdot);
        let direct = h * qddot_r + c * qdot_r;
        worst = worst.max((y * p.theta_true() - direct).amax());
        // Velocity-product closed form agrees with the matrix.
        worst = worst.max((c * qdot - coriolis_vector(&p, theta, qdot.z)).amax());
    }
    CheckResult {
        name: "regressor identity Y_Theta Theta = H qddot_r + C qdot_r",
        passed: worst < 1e-10,
        detail: format!("worst residual {worst:.2e}"),
    }
}

fn check_qp_against_projected_gradient(rng: &mut StdRng) -> CheckResult {
    let mut worst_gap: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(1..=10usize);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut p = m.transpose() * &m;
        for i in 0..n {
            p[(i, i)] += rng.random_range(0.1..1.0);
        }
        let c = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let mut lower = DVector::zeros(n);
        let mut upper = DVector::zeros(n);
        for i in 0..n {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            lower[i] = a.min(b);
            upper[i] = a.max(b) + 1e-3;
        }
        let mut a_in = DMatrix::zeros(2 * n, n);
        let mut b_in = DVector::zeros(2 * n);
        for i in 0..n {
            a_in[(i, i)] = 1.0;
            b_in[i] = upper[i];
            a_in[(n + i, i)] = -1.0;
            b_in[n + i] = -lower[i];
        }
        let problem = QpProblem::new(
            p.clone(),
            c.clone(),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            a_in,
            b_in,
        )
        .expect("valid problem");
        let sol = qp::solve(&problem, None);
        if sol.status != QpStatus::Optimal {
            return CheckResult {
                name: "qp vs projected-gradient oracle",
                passed: false,
                detail: format!("trial {trial}: status {:?}", sol.status),
            };
        }
        worst_kkt = worst_kkt.max(sol.kkt_residual);

        let lambda_max = p
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(0.0f64, f64::max);
        let step = 1.0 / lambda_max;
        let mut x: DVector<f64> = DVector::zeros(n);
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
        let mut converged = false;
        for _ in 0..100_000 {
            let grad = &p * &x + &c;
            let mut next = &x - step * grad;
            for i in 0..n {
                next[i] = next[i].clamp(lower[i], upper[i]);
            }
            if (&next - &x).amax() == 0.0 {
                converged = true;
                break;
            }
            x = next;
        }
        if converged {
            worst_gap = worst_gap.max((problem.objective(&sol.x) - problem.objective(&x)).abs());
        }
    }
    CheckResult {
        name: "qp vs projected-gradient oracle",
        passed: worst_gap < 1e-6 && worst_kkt < 1e-8,
        detail: format!("worst objective gap {worst_gap:.2e}, worst KKT {worst_kkt:.2e}"),
    }
}

fn check_allocation_balance(rng: &mut StdRng) -> CheckResult {
    let cfg = AllocatorConfig::default();
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        // Feasible-by-construction random pair of contacts.
        let a1 = rng.random_range(0.0..std::f64::consts::TAU);
        let a2 = a1 + rng.random_range(0.6..2.5);
        let mk = |ang: f64, rng: &mut StdRng| {
            let n = Vector2::new(ang.cos(), ang.sin());
            ContactSpec {
                r_0: Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
                n_hat: n,
                t_hat: Vector2::new(-n.y, n.x),
                d_min: -0.3,
                d_max: 0.3,
                active: true,
            }
        };
        let c1 = mk(a1, rng);
        let c2 = mk(a2, rng);
        let theta = rng.random_range(-3.0..3.0);
        let f1 = rng.random_range(1.0..25.0);
        let f2 = rng.random_range(1.0..25.0);
        let d1 = rng.random_range(-0.3..0.3);
        let d2 = rng.random_range(-0.3..0.3);
        let f_world = rot2(theta) * (f1 * c1.n_hat + f2 * c2.n_hat);
        let m_p = f1 * cross2(c1.point(d1), c1.n_hat) + f2 * cross2(c2.point(d2), c2.n_hat);
        let contacts = vec![c1, c2];
        let prev = Allocation::initial(2);
        match allocate(f_world, m_p, theta, &contacts, &prev, &cfg) {
            Ok(alloc) => {
                if alloc.status != comanip_core::allocation::AllocationStatus::Optimal {
                    return CheckResult {
                        name: "allocation balance on feasible instances",
                        passed: false,
                        detail: format!("trial {trial}: relaxed fallback on a feasible instance"),
                    };
                }
                worst = worst.max(alloc.residual_wrench.as_vector().amax());
                if alloc.f_r.iter().any(|&f| f < -1e-10) {
                    return CheckResult {
                        name: "allocation balance on feasible instances",
                        passed: false,
                        detail: format!("trial {trial}: negative force"),
                    };
                }
            }
            Err(e) => {
                return CheckResult {
                    name: "allocation balance on feasible instances",
                    passed: false,
                    detail: e.to_string(),
                }
            }
        }
    }
    CheckResult {
        name: "allocation balance on feasible instances",
        passed: worst < 1e-7,
        detail: format!("worst balance residual {worst:.2e}"),
    }
}

fn check_mpc_discretization(rng: &mut StdRng) -> CheckResult {
    let params = AgentParams::default();
    let (d, g) = continuous_matrices(&params);
    let dt = 0.0125;
    let (a_d, b_d) = discretize(&d, &g, dt);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let eta = nalgebra::SVector::<f64, 8>::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let u = nalgebra::SVector::<f64, 3>::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let f = |x: &nalgebra::SVector<f64, 8>| d * x + g * u;
        let k1 = f(&eta);
        let k2 = f(&(eta + 0.5 * dt * k1));
        let k3 = f(&(eta + 0.5 * dt * k2));
        let k4 = f(&(eta + dt * k3));
        let rk4 = eta + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        worst = worst.max((rk4 - (a_d * eta + b_d * u)).amax());
    }
    CheckResult {
        name: "mpc zero-order-hold discretization vs RK4",
        passed: worst < 1e-10,
        detail: format!("worst mismatch {worst:.2e}"),
    }
}

/// Run every suite, printing one line each; returns the number of failures.
pub fn run_selftest() -> usize {
    let mut rng = StdRng::seed_from_u64(0xC0FFEE);
    let checks = vec![
        check_rotation_and_mass_matrix(&mut rng),
        check_skew_symmetry(&mut rng),
        check_regressor_identity(&mut rng),
        check_qp_against_projected_gradient(&mut rng),
        check_allocation_balance(&mut rng),
        check_mpc_discretization(&mut rng),
    ];
    let mut failures = 0;
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("[{status}] {} — {}", c.name, c.detail);
        if !c.passed {
            failures += 1;
        }
    }
    failures
}
