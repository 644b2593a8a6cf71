//! Scenario configuration: TOML-backed description of the object, agents,
//! desired trajectory, controller choices, rates, and timed events.
//!
//! The schema mirrors the structs here field by field; see the repository
//! README for a commented example.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use comanip_core::adaptive::{AdaptiveGains, Saturation, TrajectorySample};
use comanip_core::allocation::AllocatorConfig;
use comanip_core::dynamics::{ContactSpec, FrictionMap, ObjectParams};
use comanip_core::mpc::{AgentParams, MpcConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Controller choice for the object-level (L1) loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Adaptive,
    Pd,
}

/// Allocator choice for the distribution (L2) loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AllocatorKind {
    Qp,
    Heuristic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Run length, s.
    pub duration: f64,
    /// RNG seed for the scenario's stochastic elements (drop jitter).
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rates: RatesConfig,
    pub object: ObjectConfig,
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub allocator: AllocatorSection,
    #[serde(default)]
    pub mpc: MpcSection,
    /// Geometric tolerance for staying in contact, m.
    #[serde(default = "default_contact_tol")]
    pub contact_tol: f64,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub events: Vec<EventConfig>,
}

fn default_contact_tol() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub physics_hz: u32,
    pub l1_l2_hz: u32,
    pub l3_hz: u32,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            physics_hz: 1000,
            l1_l2_hz: 100,
            l3_hz: 150,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub mass: f64,
    /// Yaw inertia about the COM, kg m^2.
    pub inertia: f64,
    /// COM offset parameter of the mass matrix (see core docs), m.
    #[serde(default)]
    pub com_offset: [f64; 2],
    pub half_extents: [f64; 2],
    #[serde(default = "default_rho_eff")]
    pub rho_eff: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub friction: FrictionConfig,
}

fn default_rho_eff() -> f64 {
    0.2
}

fn default_gravity() -> f64 {
    9.81
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionConfig {
    pub default_mu: f64,
    /// Zones by world x; each overrides the coefficient from `x_from` on.
    #[serde(default)]
    pub zones: Vec<FrictionZone>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionZone {
    pub x_from: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default = "default_controller_kind")]
    pub kind: ControllerKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Diagonal of K_D.
    #[serde(default = "default_k_d")]
    pub k_d: [f64; 3],
    /// Diagonal of Gamma_Theta.
    #[serde(default = "default_gamma_theta")]
    pub gamma_theta: [f64; 4],
    /// Diagonal of Gamma_Psi.
    #[serde(default = "default_gamma_psi")]
    pub gamma_psi: [f64; 3],
    /// Initial Theta_hat (defaults to zero: no prior knowledge).
    #[serde(default)]
    pub theta_hat0: [f64; 4],
    /// Initial Psi_hat.
    #[serde(default)]
    pub psi_hat0: [f64; 3],
    /// Wrench saturation.
    #[serde(default = "default_f_max")]
    pub f_max: f64,
    #[serde(default = "default_m_max")]
    pub m_max: f64,
    /// PD baseline gains (diagonals).
    #[serde(default = "default_k_p_pd")]
    pub k_p_pd: [f64; 3],
    #[serde(default = "default_k_d")]
    pub k_d_pd: [f64; 3],
}

fn default_controller_kind() -> ControllerKind {
    ControllerKind::Adaptive
}
fn default_lambda() -> f64 {
    1.0
}
fn default_k_d() -> [f64; 3] {
    [40.0, 40.0, 15.0]
}
fn default_gamma_theta() -> [f64; 4] {
    [1.0, 1.0, 1.0, 0.5]
}
fn default_gamma_psi() -> [f64; 3] {
    [2.0, 2.0, 1.0]
}
fn default_f_max() -> f64 {
    150.0
}
fn default_m_max() -> f64 {
    50.0
}
fn default_k_p_pd() -> [f64; 3] {
    [60.0, 60.0, 25.0]
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: default_controller_kind(),
            lambda: default_lambda(),
            k_d: default_k_d(),
            gamma_theta: default_gamma_theta(),
            gamma_psi: default_gamma_psi(),
            theta_hat0: [0.0; 4],
            psi_hat0: [0.0; 3],
            f_max: default_f_max(),
            m_max: default_m_max(),
            k_p_pd: default_k_p_pd(),
            k_d_pd: default_k_d(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocatorSection {
    #[serde(default = "default_allocator_kind")]
    pub kind: AllocatorKind,
    #[serde(default = "default_gamma1")]
    pub gamma1: f64,
    #[serde(default = "default_gamma2")]
    pub gamma2: f64,
    #[serde(default = "default_gamma3")]
    pub gamma3: f64,
    #[serde(default = "default_f_eps")]
    pub f_eps: f64,
    /// Gain of the heuristic slide policy.
    #[serde(default = "default_k_p_d")]
    pub k_p_d: f64,
}

fn default_allocator_kind() -> AllocatorKind {
    AllocatorKind::Qp
}
fn default_gamma1() -> f64 {
    1.0
}
fn default_gamma2() -> f64 {
    0.1
}
fn default_gamma3() -> f64 {
    10.0
}
fn default_f_eps() -> f64 {
    0.1
}
fn default_k_p_d() -> f64 {
    1.0
}

impl Default for AllocatorSection {
    fn default() -> Self {
        Self {
            kind: default_allocator_kind(),
            gamma1: default_gamma1(),
            gamma2: default_gamma2(),
            gamma3: default_gamma3(),
            f_eps: default_f_eps(),
            k_p_d: default_k_p_d(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Prediction steps per L3 tick (prediction dt = steps / l3_hz).
    #[serde(default = "default_pred_ticks")]
    pub prediction_ticks: u32,
    #[serde(default = "default_q_weights")]
    pub q_weights: [f64; 6],
    #[serde(default = "default_r_weights")]
    pub r_weights: [f64; 3],
}

fn default_horizon() -> usize {
    10
}
fn default_pred_ticks() -> u32 {
    2
}
fn default_q_weights() -> [f64; 6] {
    [50.0, 50.0, 20.0, 1.0, 1.0, 2.0]
}
fn default_r_weights() -> [f64; 3] {
    [1e-4, 1e-4, 1e-4]
}

impl Default for MpcSection {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            prediction_ticks: default_pred_ticks(),
            q_weights: default_q_weights(),
            r_weights: default_r_weights(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default = "default_agent_mass")]
    pub mass: f64,
    #[serde(default = "default_agent_inertia")]
    pub inertia: f64,
    #[serde(default = "default_moment_cap")]
    pub moment_cap: f64,
    /// Contact anchor on the object face, body frame.
    pub anchor: [f64; 2],
    /// Inward unit normal of the face (push direction).
    pub normal: [f64; 2],
    pub slide_min: f64,
    pub slide_max: f64,
    #[serde(default = "default_standoff")]
    pub standoff: f64,
    /// Optional hard cap on the delivered push force, N.
    #[serde(default)]
    pub force_cap: Option<f64>,
    /// Agents that join later start inactive.
    #[serde(default = "default_true")]
    pub initially_active: bool,
}

fn default_agent_mass() -> f64 {
    12.0
}
fn default_agent_inertia() -> f64 {
    0.35
}
fn default_moment_cap() -> f64 {
    8.0
}
fn default_standoff() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Inelastic load drop onto the object.
    MassDrop {
        mass: f64,
        offset: [f64; 2],
        /// Uniform jitter half-width added to the offset per axis, seeded.
        #[serde(default)]
        jitter: f64,
    },
    /// Terrain change from `x_from` onward.
    FrictionZone { x_from: f64, mu: f64 },
    AgentJoin { index: usize },
    AgentLeave { index: usize },
}

impl EventKind {
    pub fn label(&self) -> String {
        match self {
            EventKind::MassDrop { mass, .. } => format!("mass_drop({mass})"),
            EventKind::FrictionZone { mu, .. } => format!("friction_zone({mu})"),
            EventKind::AgentJoin { index } => format!("agent_join({index})"),
            EventKind::AgentLeave { index } => format!("agent_leave({index})"),
        }
    }
}

// ---------------------------------------------------------------------------
// Desired trajectories
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrajectoryConfig {
    /// Straight segment with a trapezoidal speed profile. Yaw interpolates
    /// from `start[2]` to `end[2]` with path fraction unless `yaw_sweep`
    /// overrides it in time.
    Line {
        start: [f64; 3],
        end: [f64; 3],
        v_max: f64,
        a_max: f64,
        #[serde(default)]
        yaw_sweep: Option<YawSweep>,
    },
    /// Circular arc from `angle_start` to `angle_end` around `center`.
    Arc {
        center: [f64; 2],
        radius: f64,
        angle_start: f64,
        angle_end: f64,
        v_max: f64,
        a_max: f64,
        /// "tangent" follows the travel direction; a number holds that yaw.
        #[serde(default)]
        yaw: ArcYaw,
    },
    /// Piecewise-linear path through `points` (x, y, yaw each).
    Waypoints {
        points: Vec<[f64; 3]>,
        v_max: f64,
        a_max: f64,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YawSweep {
    pub from: f64,
    pub to: f64,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArcYaw {
    #[default]
    Tangent,
    Hold(f64),
}

/// Trapezoidal (or triangular) speed profile along a path of given length.
#[derive(Clone, Copy, Debug)]
pub struct Trapezoid {
    length: f64,
    v_peak: f64,
    accel: f64,
    t_acc: f64,
    t_flat: f64,
}

impl Trapezoid {
    pub fn new(length: f64, v_max: f64, a_max: f64) -> Self {
        let length = length.max(0.0);
        if length < 1e-12 || v_max <= 0.0 || a_max <= 0.0 {
            return Self {
                length,
                v_peak: 0.0,
                accel: a_max.max(1e-9),
                t_acc: 0.0,
                t_flat: 0.0,
            };
        }
        let v_peak = v_max.min((a_max * length).sqrt());
        let t_acc = v_peak / a_max;
        let flat_len = length - v_peak * t_acc;
        let t_flat = (flat_len / v_peak).max(0.0);
        Self {
            length,
            v_peak,
            accel: a_max,
            t_acc,
            t_flat,
        }
    }

    pub fn total_time(&self) -> f64 {
        2.0 * self.t_acc + self.t_flat
    }

    /// Path position, speed, and acceleration at time `t`.
    pub fn sample(&self, t: f64) -> (f64, f64, f64) {
        if self.v_peak == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let a = self.accel;
        let (t1, t2, t3) = (self.t_acc, self.t_acc + self.t_flat, self.total_time());
        if t <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if t < t1 {
            (0.5 * a * t * t, a * t, a)
        } else if t < t2 {
            let s1 = 0.5 * a * t1 * t1;
            (s1 + self.v_peak * (t - t1), self.v_peak, 0.0)
        } else if t < t3 {
            let tau = t3 - t;
            (self.length - 0.5 * a * tau * tau, a * tau, -a)
        } else {
            (self.length, 0.0, 0.0)
        }
    }
}

/// Time-parameterized desired trajectory built from a [`TrajectoryConfig`].
#[derive(Clone, Debug)]
pub enum Trajectory {
    Line {
        start: Vector2<f64>,
        dir: Vector2<f64>,
        yaw0: f64,
        yaw1: f64,
        profile: Trapezoid,
        yaw_sweep: Option<YawSweep>,
    },
    Arc {
        center: Vector2<f64>,
        radius: f64,
        angle0: f64,
        sign: f64,
        profile: Trapezoid,
        yaw: ArcYaw,
    },
    Waypoints {
        points: Vec<Vector3<f64>>,
        cumulative: Vec<f64>,
        profile: Trapezoid,
    },
}

impl Trajectory {
    pub fn build(cfg: &TrajectoryConfig) -> Result<Self, ScenarioError> {
        match cfg {
            TrajectoryConfig::Line {
                start,
                end,
                v_max,
                a_max,
                yaw_sweep,
            } => {
                let p0 = Vector2::new(start[0], start[1]);
                let p1 = Vector2::new(end[0], end[1]);
                let delta = p1 - p0;
                let length = delta.norm();
                let dir = if length > 1e-12 {
                    delta / length
                } else {
                    Vector2::zeros()
                };
                Ok(Trajectory::Line {
                    start: p0,
                    dir,
                    yaw0: start[2],
                    yaw1: end[2],
                    profile: Trapezoid::new(length, *v_max, *a_max),
                    yaw_sweep: *yaw_sweep,
                })
            }
            TrajectoryConfig::Arc {
                center,
                radius,
                angle_start,
                angle_end,
                v_max,
                a_max,
                yaw,
            } => {
                if *radius <= 0.0 {
                    return Err(ScenarioError::Invalid("arc radius must be positive".into()));
                }
                let length = radius * (angle_end - angle_start).abs();
                Ok(Trajectory::Arc {
                    center: Vector2::new(center[0], center[1]),
                    radius: *radius,
                    angle0: *angle_start,
                    sign: (angle_end - angle_start).signum(),
                    profile: Trapezoid::new(length, *v_max, *a_max),
                    yaw: *yaw,
                })
            }
            TrajectoryConfig::Waypoints {
                points,
                v_max,
                a_max,
            } => {
                if points.len() < 2 {
                    return Err(ScenarioError::Invalid(
                        "waypoint trajectory needs at least 2 points".into(),
                    ));
                }
                let pts: Vec<Vector3<f64>> =
                    points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
                let mut cumulative = vec![0.0];
                for w in pts.windows(2) {
                    let seg = (w[1].xy() - w[0].xy()).norm();
                    cumulative.push(cumulative.last().unwrap() + seg);
                }
                let total = *cumulative.last().unwrap();
                Ok(Trajectory::Waypoints {
                    points: pts,
                    cumulative,
                    profile: Trapezoid::new(total, *v_max, *a_max),
                })
            }
        }
    }

    /// Time after which the reference holds its final pose.
    pub fn horizon(&self) -> f64 {
        match self {
            Trajectory::Line { profile, .. }
            | Trajectory::Arc { profile, .. }
            | Trajectory::Waypoints { profile, .. } => profile.total_time(),
        }
    }

    pub fn sample(&self, t: f64) -> TrajectorySample {
        match self {
            Trajectory::Line {
                start,
                dir,
                yaw0,
                yaw1,
                profile,
                yaw_sweep,
            } => {
                let (s, sd, sdd) = profile.sample(t);
                let pos = start + *dir * s;
                let vel = *dir * sd;
                let acc = *dir * sdd;
                let (yaw, yaw_rate, yaw_acc) = match yaw_sweep {
                    Some(sweep) => sweep_sample(sweep, t),
                    None => {
                        let l = profile.length.max(1e-12);
                        let dyaw = yaw1 - yaw0;
                        (
                            yaw0 + dyaw * s / l,
                            dyaw * sd / l,
                            dyaw * sdd / l,
                        )
                    }
                };
                TrajectorySample {
                    q: Vector3::new(pos.x, pos.y, yaw),
                    qdot: Vector3::new(vel.x, vel.y, yaw_rate),
                    qddot: Vector3::new(acc.x, acc.y, yaw_acc),
                }
            }
            Trajectory::Arc {
                center,
                radius,
                angle0,
                sign,
                profile,
                yaw,
            } => {
                let (s, sd, sdd) = profile.sample(t);
                let phi = angle0 + sign * s / radius;
                let phid = sign * sd / radius;
                let phidd = sign * sdd / radius;
                let (sin, cos) = phi.sin_cos();
                let radial = Vector2::new(cos, sin);
                let tangent = Vector2::new(-sin, cos);
                let pos = center + *radius * radial;
                let vel = *radius * phid * tangent;
                let acc = *radius * (phidd * tangent - phid * phid * radial);
                let (yaw, yaw_rate, yaw_acc) = match yaw {
                    ArcYaw::Tangent => {
                        (phi + sign * std::f64::consts::FRAC_PI_2, phid, phidd)
                    }
                    ArcYaw::Hold(y) => (*y, 0.0, 0.0),
                };
                TrajectorySample {
                    q: Vector3::new(pos.x, pos.y, yaw),
                    qdot: Vector3::new(vel.x, vel.y, yaw_rate),
                    qddot: Vector3::new(acc.x, acc.y, yaw_acc),
                }
            }
            Trajectory::Waypoints {
                points,
                cumulative,
                profile,
            } => {
                let (s, sd, sdd) = profile.sample(t);
                let total = *cumulative.last().unwrap();
                let s = s.min(total);
                // Find the segment containing s.
                let mut seg = 0;
                while seg + 2 < cumulative.len() && cumulative[seg + 1] <= s {
                    seg += 1;
                }
                let s0 = cumulative[seg];
                let s1 = cumulative[seg + 1];
                let len = (s1 - s0).max(1e-12);
                let f = ((s - s0) / len).clamp(0.0, 1.0);
                let a = &points[seg];
                let b = &points[seg + 1];
                let dir = (b.xy() - a.xy()) / len;
                let dyaw = comanip_core::wrap_angle(b.z - a.z);
                let pos = a.xy() + dir * (s - s0);
                TrajectorySample {
                    q: Vector3::new(pos.x, pos.y, a.z + dyaw * f),
                    qdot: Vector3::new(dir.x * sd, dir.y * sd, dyaw * sd / len),
                    qddot: Vector3::new(dir.x * sdd, dir.y * sdd, dyaw * sdd / len),
                }
            }
        }
    }
}

/// Smooth cosine ramp between two yaw values over a time window.
fn sweep_sample(sweep: &YawSweep, t: f64) -> (f64, f64, f64) {
    let span = (sweep.t_end - sweep.t_start).max(1e-9);
    let dyaw = sweep.to - sweep.from;
    if t <= sweep.t_start {
        (sweep.from, 0.0, 0.0)
    } else if t >= sweep.t_end {
        (sweep.to, 0.0, 0.0)
    } else {
        let tau = (t - sweep.t_start) / span;
        let pi = std::f64::consts::PI;
        let yaw = sweep.from + dyaw * 0.5 * (1.0 - (pi * tau).cos());
        let rate = dyaw * 0.5 * pi / span * (pi * tau).sin();
        let acc = dyaw * 0.5 * (pi / span) * (pi / span) * (pi * tau).cos();
        (yaw, rate, acc)
    }
}

// ---------------------------------------------------------------------------
// Conversions into core types
// ---------------------------------------------------------------------------

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration > 0.0) {
            return Err(ScenarioError::Invalid("duration must be positive".into()));
        }
        if self.rates.physics_hz == 0 || self.rates.l1_l2_hz == 0 || self.rates.l3_hz == 0 {
            return Err(ScenarioError::Invalid("rates must be positive".into()));
        }
        if self.agents.is_empty() {
            return Err(ScenarioError::Invalid("at least one agent required".into()));
        }
        for ev in &self.events {
            if ev.time < 0.0 || ev.time > self.duration {
                return Err(ScenarioError::Invalid(format!(
                    "event at t={} outside the run duration",
                    ev.time
                )));
            }
            match ev.kind {
                EventKind::AgentJoin { index } | EventKind::AgentLeave { index } => {
                    if index >= self.agents.len() {
                        return Err(ScenarioError::Invalid(format!(
                            "event references agent {index} but there are {}",
                            self.agents.len()
                        )));
                    }
                }
                EventKind::MassDrop { mass, .. } => {
                    if !(mass > 0.0) {
                        return Err(ScenarioError::Invalid("drop mass must be positive".into()));
                    }
                }
                EventKind::FrictionZone { mu, .. } => {
                    if !(mu >= 0.0) {
                        return Err(ScenarioError::Invalid("zone mu must be >= 0".into()));
                    }
                }
            }
        }
        self.object_params()
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        for (i, a) in self.agents.iter().enumerate() {
            self.contact_spec(i)
                .validate()
                .map_err(|e| ScenarioError::Invalid(format!("agent {i}: {e}")))?;
            let _ = a;
        }
        Ok(())
    }

    pub fn object_params(&self) -> ObjectParams {
        let mut mu = FrictionMap::uniform(self.object.friction.default_mu);
        for z in &self.object.friction.zones {
            mu.add_zone(z.x_from, z.mu);
        }
        ObjectParams {
            mass: self.object.mass,
            inertia_com: self.object.inertia,
            r_p: Vector2::new(self.object.com_offset[0], self.object.com_offset[1]),
            half_extents: Vector2::new(self.object.half_extents[0], self.object.half_extents[1]),
            mu,
            rho_eff: self.object.rho_eff,
            gravity: self.object.gravity,
        }
    }

    pub fn contact_spec(&self, agent_idx: usize) -> ContactSpec {
        let a = &self.agents[agent_idx];
        let n = Vector2::new(a.normal[0], a.normal[1]).normalize();
        // Tangent is the left-perpendicular of the (inward) normal.
        let t = Vector2::new(-n.y, n.x);
        ContactSpec {
            r_0: Vector2::new(a.anchor[0], a.anchor[1]),
            n_hat: n,
            t_hat: t,
            d_min: a.slide_min,
            d_max: a.slide_max,
            active: a.initially_active,
        }
    }

    pub fn agent_params(&self, agent_idx: usize) -> AgentParams {
        let a = &self.agents[agent_idx];
        AgentParams {
            mass: a.mass,
            inertia: a.inertia,
            mu_ground: self.object.friction.default_mu.max(1e-6),
            gravity: self.object.gravity,
            moment_cap: a.moment_cap,
        }
    }

    pub fn adaptive_gains(&self) -> AdaptiveGains {
        let c = &self.controller;
        AdaptiveGains {
            lambda: c.lambda,
            k_d: Matrix3::from_diagonal(&Vector3::new(c.k_d[0], c.k_d[1], c.k_d[2])),
            gamma_theta: Matrix4::from_diagonal(&Vector4::new(
                c.gamma_theta[0],
                c.gamma_theta[1],
                c.gamma_theta[2],
                c.gamma_theta[3],
            )),
            gamma_psi: Matrix3::from_diagonal(&Vector3::new(
                c.gamma_psi[0],
                c.gamma_psi[1],
                c.gamma_psi[2],
            )),
        }
    }

    pub fn saturation(&self) -> Saturation {
        Saturation {
            f_max: self.controller.f_max,
            m_max: self.controller.m_max,
        }
    }

    pub fn allocator_config(&self) -> AllocatorConfig {
        AllocatorConfig {
            gamma1: self.allocator.gamma1,
            gamma2: self.allocator.gamma2,
            gamma3: self.allocator.gamma3,
            f_eps: self.allocator.f_eps,
        }
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            horizon: self.mpc.horizon,
            dt: self.mpc.prediction_ticks as f64 / self.rates.l3_hz as f64,
            q_weights: Vector6::from_iterator(self.mpc.q_weights.iter().copied()),
            r_weights: Vector3::from_iterator(self.mpc.r_weights.iter().copied()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MINIMAL: &str = r#"
duration = 5.0

[object]
mass = 5.0
inertia = 0.4
half_extents = [0.5, 0.4]

[object.friction]
default_mu = 0.3

[trajectory]
kind = "line"
start = [0.0, 0.0, 0.0]
end = [2.0, 0.0, 0.0]
v_max = 0.2
a_max = 0.1

[[agents]]
anchor = [-0.5, 0.0]
normal = [1.0, 0.0]
slide_min = -0.2
slide_max = 0.2
"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.rates.physics_hz, 1000);
        assert_eq!(cfg.controller.kind, ControllerKind::Adaptive);
        assert_eq!(cfg.allocator.kind, AllocatorKind::Qp);
        assert_relative_eq!(cfg.contact_tol, 0.05);
        let spec = cfg.contact_spec(0);
        assert_relative_eq!(spec.t_hat, Vector2::new(0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn event_outside_duration_rejected() {
        let mut text = MINIMAL.to_string();
        text.push_str("\n[[events]]\ntime = 99.0\nkind = { friction_zone = { x_from = 1.0, mu = 0.8 } }\n");
        assert!(ScenarioConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn trapezoid_reaches_length_and_rests() {
        let tz = Trapezoid::new(4.0, 0.2, 0.1);
        let t_end = tz.total_time();
        // 4 m at 0.2 m/s with 0.1 m/s^2 ramps: 2 s ramps, 18 s cruise.
        assert_relative_eq!(t_end, 22.0, epsilon = 1e-12);
        let (s, v, a) = tz.sample(t_end + 1.0);
        assert_relative_eq!(s, 4.0, epsilon = 1e-12);
        assert_eq!(v, 0.0);
        assert_eq!(a, 0.0);
        let (s1, v1, _) = tz.sample(11.0);
        assert_relative_eq!(v1, 0.2, epsilon = 1e-12);
        assert!(s1 > 0.0 && s1 < 4.0);
    }

    #[test]
    fn trapezoid_triangle_case() {
        let tz = Trapezoid::new(0.1, 1.0, 0.1);
        // Too short to reach v_max: peak = sqrt(a L) = 0.1.
        let (s, v, _) = tz.sample(tz.total_time() / 2.0);
        assert_relative_eq!(v, 0.1, epsilon = 1e-12);
        assert_relative_eq!(s, 0.05, epsilon = 1e-12);
        assert_relative_eq!(tz.sample(1e9).0, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn line_trajectory_consistent_derivatives() {
        let cfg = TrajectoryConfig::Line {
            start: [0.0, 0.0, 0.0],
            end: [3.0, 4.0, 0.5],
            v_max: 0.3,
            a_max: 0.2,
            yaw_sweep: None,
        };
        let traj = Trajectory::build(&cfg).unwrap();
        let eps = 1e-6;
        for t in [0.5, 2.0, 5.0, 9.0] {
            let s = traj.sample(t);
            let sp = traj.sample(t + eps);
            let sm = traj.sample(t - eps);
            let fd_vel = (sp.q - sm.q) / (2.0 * eps);
            let fd_acc = (sp.qdot - sm.qdot) / (2.0 * eps);
            assert!((fd_vel - s.qdot).amax() < 1e-6, "t={t}");
            assert!((fd_acc - s.qddot).amax() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn arc_trajectory_consistent_derivatives() {
        let cfg = TrajectoryConfig::Arc {
            center: [0.0, -3.0],
            radius: 3.0,
            angle_start: std::f64::consts::FRAC_PI_2,
            angle_end: std::f64::consts::FRAC_PI_2 + 1.0,
            v_max: 0.25,
            a_max: 0.15,
            yaw: ArcYaw::Tangent,
        };
        let traj = Trajectory::build(&cfg).unwrap();
        let eps = 1e-6;
        for t in [0.4, 3.0, 8.0] {
            let s = traj.sample(t);
            let sp = traj.sample(t + eps);
            let sm = traj.sample(t - eps);
            let fd_vel = (sp.q - sm.q) / (2.0 * eps);
            let fd_acc = (sp.qdot - sm.qdot) / (2.0 * eps);
            assert!((fd_vel - s.qdot).amax() < 1e-6, "t={t}");
            assert!((fd_acc - s.qddot).amax() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn yaw_sweep_ramps_smoothly() {
        let sweep = YawSweep {
            from: 0.0,
            to: -0.4,
            t_start: 1.0,
            t_end: 3.0,
        };
        let (y0, r0, _) = sweep_sample(&sweep, 0.5);
        assert_eq!((y0, r0), (0.0, 0.0));
        let (y1, _, _) = sweep_sample(&sweep, 2.0);
        assert_relative_eq!(y1, -0.2, epsilon = 1e-12);
        let (y2, r2, _) = sweep_sample(&sweep, 5.0);
        assert_eq!((y2, r2), (-0.4, 0.0));
        // Peak rate at the midpoint: dyaw * pi / (2 span).
        let (_, rate_mid, _) = sweep_sample(&sweep, 2.0);
        assert_relative_eq!(rate_mid, -0.4 * std::f64::consts::PI / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn waypoints_follow_segments() {
        let cfg = TrajectoryConfig::Waypoints {
            points: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.1], [1.0, 1.0, 0.3]],
            v_max: 0.5,
            a_max: 0.5,
        };
        let traj = Trajectory::build(&cfg).unwrap();
        let end = traj.horizon();
        let s_end = traj.sample(end + 1.0);
        assert_relative_eq!(s_end.q.x, 1.0, epsilon = 1e-9);
        assert_relative_eq!(s_end.q.y, 1.0, epsilon = 1e-9);
        assert_relative_eq!(s_end.q.z, 0.3, epsilon = 1e-9);
    }
}
