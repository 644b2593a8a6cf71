//! Multi-rate closed-loop scenario engine.
//!
//! A fixed-step physics loop advances the object and every agent at
//! `physics_hz`. The object-level controller and the allocator run every
//! `physics_hz / l1_l2_hz` steps, the per-agent MPCs every
//! `physics_hz / l3_hz` steps, and commands are zero-order-held in between.
//! Timed events (load drops, terrain changes, agents joining or leaving)
//! apply atomically between steps. Runs are deterministic for a fixed
//! configuration and seed.
//!
//! Controllers never see the ground-truth object parameters: the L1 tick
//! receives only the measured object state and the trajectory sample, and
//! L2/L3 receive contact geometry and their own agent parameters.

use nalgebra::{Vector2, Vector3, Vector4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use comanip_core::adaptive::{
    AdaptiveController, ControlTick, EstimateState, PdController, TrajectorySample,
};
use comanip_core::allocation::{allocate, heuristic_allocate, Allocation, AllocationStatus};
use comanip_core::dynamics::{
    contact_resolve, rot2, step, ContactCommand, ContactSpec, ObjectParams, ObjectState, Wrench,
};
use comanip_core::mpc::{agent_step, reference_horizon, AgentMpc, AgentState};

use crate::scenario::{
    AllocatorKind, ControllerKind, EventConfig, EventKind, ScenarioConfig, ScenarioError,
    Trajectory,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("controller setup: {0}")]
    Controller(#[from] comanip_core::adaptive::AdaptiveError),
    #[error("mpc setup: {0}")]
    Mpc(#[from] comanip_core::mpc::MpcError),
    #[error("non-finite simulation state at t = {t:.4} s: {detail}")]
    NonFinite { t: f64, detail: String },
}

/// Per-agent slice of one log record.
#[derive(Clone, Debug)]
pub struct AgentRecord {
    pub f_r: f64,
    pub d: f64,
    pub in_contact: bool,
    /// Ground-reaction input currently held by the agent.
    pub u: Vector3<f64>,
    pub saturated: bool,
    pub mpc_fallback: bool,
    /// Traction coefficient under the agent at this tick.
    pub mu_ground: f64,
    pub pos: Vector2<f64>,
    pub scenario_active: bool,
}

/// One record per L1 tick.
#[derive(Clone, Debug)]
pub struct L1Record {
    pub t: f64,
    pub object: ObjectState,
    /// Desired pose `[x, y, yaw]` at this tick.
    pub desired: Vector3<f64>,
    pub s: Vector3<f64>,
    pub tau: Wrench,
    pub tau_saturated: bool,
    pub theta_hat: Vector4<f64>,
    pub psi_hat: Vector3<f64>,
    pub alloc_status: AllocationStatus,
    pub alloc_residual: Wrench,
    pub agents: Vec<AgentRecord>,
    /// Labels of events applied since the previous record.
    pub event: String,
}

/// Full run log: one record per L1 tick plus the resolved configuration.
#[derive(Clone, Debug)]
pub struct RunLog {
    pub records: Vec<L1Record>,
    pub config: ScenarioConfig,
    pub events_applied: Vec<(f64, String)>,
}

impl RunLog {
    pub fn n_agents(&self) -> usize {
        self.config.agents.len()
    }
}

/// Compose a dropped point mass into the object parameters.
///
/// The new COM offset is the mass-weighted mean of the old offset and the
/// drop offset (both in the same body-frame convention), and the inertia
/// picks up both parallel-axis terms.
pub fn apply_mass_drop(
    params: &ObjectParams,
    drop_mass: f64,
    drop_offset: Vector2<f64>,
) -> ObjectParams {
    assert!(drop_mass > 0.0, "drop mass must be positive");
    let m0 = params.mass;
    let m1 = m0 + drop_mass;
    let r_p1 = (m0 * params.r_p + drop_mass * drop_offset) / m1;
    let inertia1 = params.inertia_com
        + m0 * (params.r_p - r_p1).norm_squared()
        + drop_mass * (drop_offset - r_p1).norm_squared();
    let mut out = params.clone();
    out.mass = m1;
    out.inertia_com = inertia1;
    out.r_p = r_p1;
    out
}

/// Apply a drop to parameters and state together: the merge is inelastic,
/// conserving linear momentum and angular momentum about the new COM (the
/// dropped load arrives with zero planar velocity).
pub fn apply_mass_drop_with_state(
    params: &ObjectParams,
    state: &ObjectState,
    drop_mass: f64,
    drop_offset: Vector2<f64>,
) -> (ObjectParams, ObjectState) {
    let new_params = apply_mass_drop(params, drop_mass, drop_offset);
    let r = rot2(state.theta);

    let v_com_old = state.com_velocity(params.r_p);
    let com_old = state.com_position(params.r_p);
    let com_new = state.com_position(new_params.r_p);

    let v_com_new = (params.mass / new_params.mass) * v_com_old;
    let ang_momentum = params.inertia_com * state.omega
        + params.mass * comanip_core::dynamics::cross2(com_old - com_new, v_com_old);
    let omega_new = ang_momentum / new_params.inertia_com;

    // Back out the reference-point velocity for the new COM offset.
    let v_p_new = v_com_new + omega_new * comanip_core::dynamics::perp(r * new_params.r_p);
    let new_state = ObjectState {
        x_p: state.x_p,
        theta: state.theta,
        v_p: v_p_new,
        omega: omega_new,
    };
    (new_params, new_state)
}

enum Controller {
    Adaptive(AdaptiveController),
    Pd(PdController),
}

impl Controller {
    fn tick(&mut self, state: &ObjectState, des: &TrajectorySample, dt: f64) -> ControlTick {
        match self {
            Controller::Adaptive(c) => c.tick(state, des, dt),
            Controller::Pd(c) => c.tick(state, des),
        }
    }

    fn estimates(&self) -> EstimateState {
        match self {
            Controller::Adaptive(c) => c.estimates,
            Controller::Pd(_) => EstimateState::zeroed(),
        }
    }
}

struct AgentRuntime {
    contact: ContactSpec,
    standoff: f64,
    force_cap: Option<f64>,
    state: AgentState,
    mpc: AgentMpc,
    scenario_active: bool,
    in_contact: bool,
    /// Zero-order-held ground-reaction input from the last L3 tick.
    u: Vector3<f64>,
    saturated: bool,
    fallback: bool,
    mu_ground: f64,
}

/// Run one scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog, SimError> {
    cfg.validate()?;
    let mut params = cfg.object_params();
    let trajectory = Trajectory::build(&cfg.trajectory)?;
    let start = trajectory.sample(0.0);
    let mut object = ObjectState::at_rest(Vector2::new(start.q.x, start.q.y), start.q.z);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut controller = match cfg.controller.kind {
        ControllerKind::Adaptive => {
            let initial = EstimateState {
                theta_hat: Vector4::from_iterator(cfg.controller.theta_hat0.iter().copied()),
                psi_hat: Vector3::from_iterator(cfg.controller.psi_hat0.iter().copied()),
            };
            Controller::Adaptive(AdaptiveController::new(
                cfg.adaptive_gains(),
                cfg.saturation(),
                initial,
            )?)
        }
        ControllerKind::Pd => {
            let c = &cfg.controller;
            Controller::Pd(PdController {
                k_p: nalgebra::Matrix3::from_diagonal(&Vector3::from_iterator(
                    c.k_p_pd.iter().copied(),
                )),
                k_d: nalgebra::Matrix3::from_diagonal(&Vector3::from_iterator(
                    c.k_d_pd.iter().copied(),
                )),
                saturation: cfg.saturation(),
            })
        }
    };

    let n_agents = cfg.agents.len();
    let mpc_cfg = cfg.mpc_config();
    let mut agents: Vec<AgentRuntime> = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let contact = cfg.contact_spec(i);
        let standoff = cfg.agents[i].standoff;
        let docked =
            comanip_core::mpc::desired_agent_state(&object, &contact, 0.0, standoff);
        let agent_params = cfg.agent_params(i);
        agents.push(AgentRuntime {
            scenario_active: contact.active,
            in_contact: contact.active,
            contact,
            standoff,
            force_cap: cfg.agents[i].force_cap,
            state: docked,
            mpc: AgentMpc::new(agent_params, mpc_cfg.clone())?,
            u: Vector3::zeros(),
            saturated: false,
            fallback: false,
            mu_ground: params.mu.mu_at(docked.pos.x),
        });
    }

    let alloc_cfg = cfg.allocator_config();
    let mut alloc = Allocation::initial(n_agents);

    let physics_hz = cfg.rates.physics_hz as u64;
    let physics_dt = 1.0 / cfg.rates.physics_hz as f64;
    let l1_div = (physics_hz / cfg.rates.l1_l2_hz as u64).max(1);
    let l3_div = (physics_hz / cfg.rates.l3_hz as u64).max(1);
    let l1_dt = l1_div as f64 * physics_dt;
    let n_steps = (cfg.duration * cfg.rates.physics_hz as f64).round() as u64;

    let mut events: Vec<(EventConfig, bool)> =
        cfg.events.iter().map(|e| (e.clone(), false)).collect();
    events.sort_by(|a, b| a.0.time.total_cmp(&b.0.time));

    let mut records: Vec<L1Record> = Vec::with_capacity((n_steps / l1_div + 2) as usize);
    let mut events_applied: Vec<(f64, String)> = Vec::new();
    let mut pending_labels: Vec<String> = Vec::new();
    let mut last_tick = ControlTick {
        s: Vector3::zeros(),
        wrench: Wrench::zero(),
        saturated: false,
    };

    for step_idx in 0..n_steps {
        let t = step_idx as f64 * physics_dt;

        // Events due at or before this step apply atomically first.
        for (ev, applied) in events.iter_mut() {
            if *applied || ev.time > t + 0.5 * physics_dt {
                continue;
            }
            *applied = true;
            apply_event(
                ev,
                &mut params,
                &mut object,
                &mut agents,
                &alloc,
                &mut rng,
            );
            pending_labels.push(ev.kind.label());
            events_applied.push((t, ev.kind.label()));
        }

        // L1 (object wrench) + L2 (allocation).
        if step_idx % l1_div == 0 {
            let des = trajectory.sample(t);
            last_tick = controller.tick(&object, &des, l1_dt);

            let contacts: Vec<ContactSpec> = agents
                .iter()
                .map(|a| {
                    let mut c = a.contact.clone();
                    c.active = a.scenario_active && a.in_contact;
                    c
                })
                .collect();
            let any_active = contacts.iter().any(|c| c.active);
            alloc = if !any_active {
                Allocation {
                    f_r: vec![0.0; n_agents],
                    d: alloc.d.clone(),
                    residual_wrench: Wrench::zero(),
                    status: AllocationStatus::Relaxed,
                    qp_active_set: Vec::new(),
                    n_active: 0,
                }
            } else {
                let res = match cfg.allocator.kind {
                    AllocatorKind::Qp => allocate(
                        last_tick.wrench.f,
                        last_tick.wrench.m,
                        object.theta,
                        &contacts,
                        &alloc,
                        &alloc_cfg,
                    ),
                    AllocatorKind::Heuristic => heuristic_allocate(
                        last_tick.wrench.f,
                        last_tick.wrench.m,
                        object.theta,
                        des.q.z,
                        &contacts,
                        &alloc,
                        cfg.allocator.k_p_d,
                        &alloc_cfg,
                    ),
                };
                match res {
                    Ok(a) => a,
                    // All contacts vanished between the check and the solve.
                    Err(_) => Allocation::initial(n_agents),
                }
            };

            records.push(make_record(
                t,
                &object,
                &des.q,
                &last_tick,
                &controller,
                &alloc,
                &agents,
                std::mem::take(&mut pending_labels),
            ));
        }

        // L3: per-agent MPC.
        if step_idx % l3_div == 0 {
            for (i, agent) in agents.iter_mut().enumerate() {
                if !agent.scenario_active {
                    agent.u = Vector3::zeros();
                    continue;
                }
                agent.mu_ground = params.mu.mu_at(agent.state.pos.x);
                agent.mpc.set_ground_friction(agent.mu_ground);
                let delivered = delivered_force(agent, &alloc, i, &params);
                let f_world = rot2(object.theta) * (agent.contact.n_hat * delivered);
                let refs = reference_horizon(
                    &object,
                    &agent.contact,
                    alloc.d[i],
                    agent.standoff,
                    agent.mpc.cfg.horizon,
                    agent.mpc.cfg.dt,
                );
                let out = agent.mpc.mpc_step(&agent.state, f_world, &refs);
                agent.u = out.u;
                agent.saturated = out.saturated;
                agent.fallback = out.fallback;
            }
        }

        // Physics: resolve contacts, step the object, step the agents.
        let mut commands = Vec::with_capacity(n_agents);
        let mut positions = Vec::with_capacity(n_agents);
        let mut delivered = vec![0.0; n_agents];
        for (i, agent) in agents.iter().enumerate() {
            let mut spec = agent.contact.clone();
            spec.active = agent.scenario_active;
            delivered[i] = delivered_force(agent, &alloc, i, &params);
            commands.push(ContactCommand {
                spec,
                d: alloc.d[i],
                force: delivered[i],
                standoff: agent.standoff,
            });
            positions.push(agent.state.pos);
        }
        let (contact_wrench, flags) =
            contact_resolve(&object, &commands, &positions, &params, cfg.contact_tol);

        object = step(&object, &params, &contact_wrench, physics_dt).map_err(|e| {
            SimError::NonFinite {
                t,
                detail: e.to_string(),
            }
        })?;
        if !object.is_finite() {
            return Err(SimError::NonFinite {
                t,
                detail: "object state diverged".into(),
            });
        }

        for (i, agent) in agents.iter_mut().enumerate() {
            agent.in_contact = flags[i];
            if !agent.scenario_active {
                continue;
            }
            let transmitted = if flags[i] && delivered[i] > 0.0 {
                rot2(object.theta) * (agent.contact.n_hat * delivered[i])
            } else {
                Vector2::zeros()
            };
            // The ground cannot deliver more than the traction budget no
            // matter what the controller asked for.
            let bound = agent.mu_ground * agent.mpc.params.mass * agent.mpc.params.gravity;
            let u_applied = Vector3::new(
                agent.u.x.clamp(-bound, bound),
                agent.u.y.clamp(-bound, bound),
                agent.u.z.clamp(-agent.mpc.params.moment_cap, agent.mpc.params.moment_cap),
            );
            agent.state = agent_step(
                &agent.state,
                &agent.mpc.params,
                &u_applied,
                transmitted,
                physics_dt,
            );
            if !agent.state.is_finite() {
                return Err(SimError::NonFinite {
                    t,
                    detail: format!("agent {i} state diverged"),
                });
            }
        }
    }

    // Final record at t = duration.
    let t_end = n_steps as f64 * physics_dt;
    let des = trajectory.sample(t_end);
    let final_tick = ControlTick {
        s: comanip_core::adaptive::composite_error(&object, &des, cfg.controller.lambda),
        ..last_tick
    };
    records.push(make_record(
        t_end,
        &object,
        &des.q,
        &final_tick,
        &controller,
        &alloc,
        &agents,
        std::mem::take(&mut pending_labels),
    ));

    Ok(RunLog {
        records,
        config: cfg.clone(),
        events_applied,
    })
}

/// Force the agent can actually transmit this instant: the allocator's
/// command clipped by the configured cap and the traction available under
/// the agent's feet.
fn delivered_force(
    agent: &AgentRuntime,
    alloc: &Allocation,
    idx: usize,
    params: &ObjectParams,
) -> f64 {
    let cmd = alloc.f_r.get(idx).copied().unwrap_or(0.0).max(0.0);
    let traction =
        params.mu.mu_at(agent.state.pos.x) * agent.mpc.params.mass * agent.mpc.params.gravity;
    let cap = agent.force_cap.unwrap_or(f64::INFINITY);
    cmd.min(cap).min(traction)
}

fn apply_event(
    ev: &EventConfig,
    params: &mut ObjectParams,
    object: &mut ObjectState,
    agents: &mut [AgentRuntime],
    alloc: &Allocation,
    rng: &mut ChaCha8Rng,
) {
    match &ev.kind {
        EventKind::MassDrop {
            mass,
            offset,
            jitter,
        } => {
            let mut off = Vector2::new(offset[0], offset[1]);
            if *jitter > 0.0 {
                off.x += rng.random_range(-*jitter..*jitter);
                off.y += rng.random_range(-*jitter..*jitter);
            }
            let (p, s) = apply_mass_drop_with_state(params, object, *mass, off);
            *params = p;
            *object = s;
        }
        EventKind::FrictionZone { x_from, mu } => {
            params.mu.add_zone(*x_from, *mu);
        }
        EventKind::AgentJoin { index } => {
            let agent = &mut agents[*index];
            agent.scenario_active = true;
            agent.in_contact = true;
            let d = alloc.d.get(*index).copied().unwrap_or(0.0);
            agent.state =
                comanip_core::mpc::desired_agent_state(object, &agent.contact, d, agent.standoff);
            agent.u = Vector3::zeros();
        }
        EventKind::AgentLeave { index } => {
            let agent = &mut agents[*index];
            agent.scenario_active = false;
            agent.in_contact = false;
            agent.u = Vector3::zeros();
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn make_record(
    t: f64,
    object: &ObjectState,
    desired: &Vector3<f64>,
    tick: &ControlTick,
    controller: &Controller,
    alloc: &Allocation,
    agents: &[AgentRuntime],
    labels: Vec<String>,
) -> L1Record {
    let est = controller.estimates();
    L1Record {
        t,
        object: *object,
        desired: *desired,
        s: tick.s,
        tau: tick.wrench,
        tau_saturated: tick.saturated,
        theta_hat: est.theta_hat,
        psi_hat: est.psi_hat,
        alloc_status: alloc.status,
        alloc_residual: alloc.residual_wrench,
        agents: agents
            .iter()
            .enumerate()
            .map(|(i, a)| AgentRecord {
                f_r: alloc.f_r.get(i).copied().unwrap_or(0.0),
                d: alloc.d.get(i).copied().unwrap_or(0.0),
                in_contact: a.scenario_active && a.in_contact,
                u: a.u,
                saturated: a.saturated,
                mpc_fallback: a.fallback,
                mu_ground: a.mu_ground,
                pos: a.state.pos,
                scenario_active: a.scenario_active,
            })
            .collect(),
        event: labels.join(";"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use comanip_core::dynamics::FrictionMap;

    fn base_params() -> ObjectParams {
        ObjectParams {
            mass: 5.0,
            inertia_com: 0.4,
            r_p: Vector2::zeros(),
            half_extents: Vector2::new(0.5, 0.4),
            mu: FrictionMap::uniform(0.3),
            rho_eff: 0.2,
            gravity: 9.81,
        }
    }

    #[test]
    fn mass_drop_coincident_keeps_com() {
        let p = base_params();
        let p2 = apply_mass_drop(&p, 2.0, p.r_p);
        assert_relative_eq!(p2.mass, 7.0, epsilon = 1e-12);
        assert_relative_eq!(p2.r_p, p.r_p, epsilon = 1e-12);
        assert_relative_eq!(p2.inertia_com, p.inertia_com, epsilon = 1e-12);
    }

    #[test]
    fn mass_drop_composite_com_arithmetic() {
        let p = base_params();
        let p2 = apply_mass_drop(&p, 2.0, Vector2::new(0.5, 0.0));
        assert_relative_eq!(p2.r_p.x, 1.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(p2.r_p.y, 0.0, epsilon = 1e-12);
        // Parallel axis from both sides.
        let expected_inertia =
            0.4 + 5.0 * (1.0f64 / 7.0).powi(2) + 2.0 * (0.5 - 1.0 / 7.0).powi(2);
        assert_relative_eq!(p2.inertia_com, expected_inertia, epsilon = 1e-12);
    }

    #[test]
    fn three_drops_total_eleven_kilograms() {
        let mut p = base_params();
        for _ in 0..3 {
            p = apply_mass_drop(&p, 2.0, Vector2::new(0.2, -0.1));
        }
        assert_relative_eq!(p.mass, 11.0, epsilon = 1e-12);
    }

    #[test]
    fn mass_drop_conserves_linear_momentum() {
        let p = base_params();
        let state = ObjectState {
            x_p: Vector2::new(1.0, 0.5),
            theta: 0.3,
            v_p: Vector2::new(0.4, -0.1),
            omega: 0.6,
        };
        let before = p.mass * state.com_velocity(p.r_p);
        let (p2, s2) = apply_mass_drop_with_state(&p, &state, 2.0, Vector2::new(0.3, 0.2));
        let after = p2.mass * s2.com_velocity(p2.r_p);
        assert!((before - after).norm() < 1e-12, "momentum jumped");
        // Pose is untouched by the drop.
        assert_eq!(s2.x_p, state.x_p);
        assert_eq!(s2.theta, state.theta);
    }

    #[test]
    fn mass_drop_conserves_angular_momentum_about_new_com() {
        let p = base_params();
        let state = ObjectState {
            x_p: Vector2::new(0.0, 0.0),
            theta: -0.7,
            v_p: Vector2::new(0.2, 0.3),
            omega: 1.2,
        };
        let off = Vector2::new(0.4, -0.25);
        let (p2, s2) = apply_mass_drop_with_state(&p, &state, 2.0, off);
        let com_new = state.com_position(p2.r_p);
        let com_old = state.com_position(p.r_p);
        let l_before = p.inertia_com * state.omega
            + p.mass
                * comanip_core::dynamics::cross2(com_old - com_new, state.com_velocity(p.r_p));
        let l_after = p2.inertia_com * s2.omega;
        assert_relative_eq!(l_before, l_after, epsilon = 1e-12);
    }
}
