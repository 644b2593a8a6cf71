//! Tracking metrics computed from a run log.

use comanip_core::wrap_angle;
use serde::Serialize;

use crate::sim::RunLog;

#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    pub rms_pos_err: f64,
    pub max_pos_err: f64,
    pub final_pos_err: f64,
    pub rms_yaw_err: f64,
    pub max_yaw_err: f64,
    pub final_yaw_err: f64,
    /// Falling edges of the in-contact flags summed over agents.
    pub contact_losses: u32,
    /// Fraction of (tick, active agent) samples with a saturated MPC input.
    pub agent_saturation_duty: f64,
    /// Fraction of ticks with a saturated L1 wrench.
    pub wrench_saturation_duty: f64,
    pub max_theta_hat_norm: f64,
    pub max_psi_hat_norm: f64,
    /// Fraction of ticks in which the allocator fell back to soft balance.
    pub alloc_relaxed_fraction: f64,
    /// Largest balance residual over ticks with an exact (optimal) solve.
    pub max_optimal_balance_residual: f64,
}

fn pos_err(rec: &crate::sim::L1Record) -> f64 {
    (rec.object.x_p - rec.desired.xy()).norm()
}

fn yaw_err(rec: &crate::sim::L1Record) -> f64 {
    wrap_angle(rec.object.theta - rec.desired.z).abs()
}

/// Summary metrics over the whole log.
pub fn metrics(log: &RunLog) -> Metrics {
    assert!(!log.records.is_empty(), "empty run log");
    let n = log.records.len() as f64;
    let mut sum_pos2 = 0.0;
    let mut sum_yaw2 = 0.0;
    let mut max_pos: f64 = 0.0;
    let mut max_yaw: f64 = 0.0;
    let mut losses = 0u32;
    let mut sat_samples = 0u64;
    let mut active_samples = 0u64;
    let mut wrench_sat = 0u64;
    let mut max_theta: f64 = 0.0;
    let mut max_psi: f64 = 0.0;
    let mut relaxed = 0u64;
    let mut max_residual: f64 = 0.0;

    for (k, rec) in log.records.iter().enumerate() {
        let pe = pos_err(rec);
        let ye = yaw_err(rec);
        sum_pos2 += pe * pe;
        sum_yaw2 += ye * ye;
        max_pos = max_pos.max(pe);
        max_yaw = max_yaw.max(ye);
        wrench_sat += rec.tau_saturated as u64;
        max_theta = max_theta.max(rec.theta_hat.norm());
        max_psi = max_psi.max(rec.psi_hat.norm());
        match rec.alloc_status {
            comanip_core::allocation::AllocationStatus::Relaxed => relaxed += 1,
            comanip_core::allocation::AllocationStatus::Optimal => {
                max_residual = max_residual.max(rec.alloc_residual.as_vector().amax());
            }
        }
        for (i, a) in rec.agents.iter().enumerate() {
            if a.scenario_active {
                active_samples += 1;
                sat_samples += a.saturated as u64;
            }
            if k > 0 {
                let prev = &log.records[k - 1].agents[i];
                if prev.in_contact && !a.in_contact {
                    losses += 1;
                }
            }
        }
    }

    let last = log.records.last().unwrap();
    Metrics {
        rms_pos_err: (sum_pos2 / n).sqrt(),
        max_pos_err: max_pos,
        final_pos_err: pos_err(last),
        rms_yaw_err: (sum_yaw2 / n).sqrt(),
        max_yaw_err: max_yaw,
        final_yaw_err: yaw_err(last),
        contact_losses: losses,
        agent_saturation_duty: if active_samples > 0 {
            sat_samples as f64 / active_samples as f64
        } else {
            0.0
        },
        wrench_saturation_duty: wrench_sat as f64 / n,
        max_theta_hat_norm: max_theta,
        max_psi_hat_norm: max_psi,
        alloc_relaxed_fraction: relaxed as f64 / n,
        max_optimal_balance_residual: max_residual,
    }
}

/// Mean position error over records with `t` in `[t0, t1)`.
pub fn mean_pos_err_window(log: &RunLog, t0: f64, t1: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for rec in &log.records {
        if rec.t >= t0 && rec.t < t1 {
            sum += pos_err(rec);
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Minimum position error over records with `t` in `[t0, t1)`.
pub fn min_pos_err_window(log: &RunLog, t0: f64, t1: f64) -> f64 {
    log.records
        .iter()
        .filter(|r| r.t >= t0 && r.t < t1)
        .map(pos_err)
        .fold(f64::INFINITY, f64::min)
}

/// Maximum position error over records with `t` in `[t0, t1)`.
pub fn max_pos_err_window(log: &RunLog, t0: f64, t1: f64) -> f64 {
    log.records
        .iter()
        .filter(|r| r.t >= t0 && r.t < t1)
        .map(pos_err)
        .fold(0.0, f64::max)
}

/// Largest allocator balance residual over records with `t` in `[t0, t1)`.
pub fn max_balance_residual_window(log: &RunLog, t0: f64, t1: f64) -> f64 {
    log.records
        .iter()
        .filter(|r| r.t >= t0 && r.t < t1)
        .map(|r| r.alloc_residual.as_vector().amax())
        .fold(0.0, f64::max)
}

/// Position-error time series `(t, err)`.
pub fn pos_err_series(log: &RunLog) -> Vec<(f64, f64)> {
    log.records.iter().map(|r| (r.t, pos_err(r))).collect()
}

/// Yaw-error time series `(t, |err|)`.
pub fn yaw_err_series(log: &RunLog) -> Vec<(f64, f64)> {
    log.records.iter().map(|r| (r.t, yaw_err(r))).collect()
}
