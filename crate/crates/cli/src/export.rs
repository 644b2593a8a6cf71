//! Run-log export: CSV telemetry, JSON summary, and SVG plots.
//!
//! The CSV schema is fixed:
//!
//! ```text
//! t, xp_x, xp_y, theta, xd_x, xd_y, theta_d, s1, s2, s3,
//! tau_fx, tau_fy, tau_m, theta_hat_1..4, psi_hat_1..3,
//! [per agent i: Fr_i, d_i, contact_i, ufx_i, ufy_i, um_i, sat_i], event
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! runs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::metrics::{metrics, pos_err_series, yaw_err_series};
use crate::sim::RunLog;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("failed writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExportError> {
    std::fs::write(path, contents).map_err(|source| ExportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Build-id string stamped into summaries.
pub fn build_id() -> String {
    option_env!("COMANIP_BUILD_ID")
        .map(str::to_owned)
        .unwrap_or_else(|| format!("comanip-v{}", env!("CARGO_PKG_VERSION")))
}

/// CSV header for a run with `n_agents` agents.
pub fn csv_header(n_agents: usize) -> String {
    let mut h = String::from("t,xp_x,xp_y,theta,xd_x,xd_y,theta_d,s1,s2,s3,tau_fx,tau_fy,tau_m");
    for k in 1..=4 {
        let _ = write!(h, ",theta_hat_{k}");
    }
    for k in 1..=3 {
        let _ = write!(h, ",psi_hat_{k}");
    }
    for i in 1..=n_agents {
        let _ = write!(h, ",Fr_{i},d_{i},contact_{i},ufx_{i},ufy_{i},um_{i},sat_{i}");
    }
    h.push_str(",event");
    h
}

/// Render the full CSV (header plus one row per L1 tick).
pub fn to_csv(log: &RunLog) -> String {
    let n_agents = log.n_agents();
    let mut out = csv_header(n_agents);
    out.push('\n');
    for rec in &log.records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            rec.t,
            rec.object.x_p.x,
            rec.object.x_p.y,
            rec.object.theta,
            rec.desired.x,
            rec.desired.y,
            rec.desired.z,
            rec.s.x,
            rec.s.y,
            rec.s.z,
            rec.tau.f.x,
            rec.tau.f.y,
            rec.tau.m,
        );
        for k in 0..4 {
            let _ = write!(out, ",{}", rec.theta_hat[k]);
        }
        for k in 0..3 {
            let _ = write!(out, ",{}", rec.psi_hat[k]);
        }
        for a in &rec.agents {
            let _ = write!(
                out,
                ",{},{},{},{},{},{},{}",
                a.f_r,
                a.d,
                a.in_contact as u8,
                a.u.x,
                a.u.y,
                a.u.z,
                a.saturated as u8,
            );
        }
        let _ = writeln!(out, ",{}", rec.event);
    }
    out
}

/// JSON summary: metrics, the resolved scenario, and the build id.
pub fn to_summary_json(log: &RunLog) -> Result<String, ExportError> {
    let summary = serde_json::json!({
        "build_id": build_id(),
        "metrics": metrics(log),
        "events_applied": log.events_applied
            .iter()
            .map(|(t, label)| serde_json::json!({ "t": t, "event": label }))
            .collect::<Vec<_>>(),
        "config": log.config,
    });
    Ok(serde_json::to_string_pretty(&summary)?)
}

/// Write `run.csv` and `summary.json` (and plots when requested) into `dir`.
pub fn export(log: &RunLog, dir: &Path, plots: bool) -> Result<(), ExportError> {
    std::fs::create_dir_all(dir).map_err(|source| ExportError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_file(&dir.join("run.csv"), &to_csv(log))?;
    write_file(&dir.join("summary.json"), &to_summary_json(log)?)?;
    if plots {
        write_file(&dir.join("trajectory.svg"), &trajectory_svg(log))?;
        write_file(&dir.join("errors.svg"), &errors_svg(log))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Minimal SVG line plots
// ---------------------------------------------------------------------------

struct Frame {
    w: f64,
    h: f64,
    margin: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn new(x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let pad = |lo: f64, hi: f64| {
            let span = (hi - lo).max(1e-9);
            (lo - 0.05 * span, hi + 0.05 * span)
        };
        Self {
            w: 800.0,
            h: 500.0,
            margin: 50.0,
            x_range: pad(x_range.0, x_range.1),
            y_range: pad(y_range.0, y_range.1),
        }
    }

    fn x(&self, v: f64) -> f64 {
        let (lo, hi) = self.x_range;
        self.margin + (v - lo) / (hi - lo) * (self.w - 2.0 * self.margin)
    }

    fn y(&self, v: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.h - self.margin - (v - lo) / (hi - lo) * (self.h - 2.0 * self.margin)
    }

    fn polyline(&self, pts: &[(f64, f64)], color: &str, dash: bool) -> String {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.x(x), self.y(y)))
            .collect();
        let dash_attr = if dash {
            " stroke-dasharray=\"6,4\""
        } else {
            ""
        };
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash_attr}/>\n",
            coords.join(" ")
        )
    }

    fn open(&self, title: &str, x_label: &str, y_label: &str) -> String {
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            w = self.w,
            h = self.h
        );
        let _ = write!(
            s,
            "<text x=\"{:.0}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
            self.w / 2.0
        );
        // Axes.
        let _ = write!(
            s,
            "<line x1=\"{m}\" y1=\"{ym}\" x2=\"{xm}\" y2=\"{ym}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{ym}\" stroke=\"black\"/>\n",
            m = self.margin,
            xm = self.w - self.margin,
            ym = self.h - self.margin
        );
        let _ = write!(
            s,
            "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>\n",
            self.w / 2.0,
            self.h - 12.0
        );
        let _ = write!(
            s,
            "<text x=\"14\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.0})\">{y_label}</text>\n",
            self.h / 2.0,
            self.h / 2.0
        );
        // Range labels.
        let _ = write!(
            s,
            "<text x=\"{m}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}..{:.3}</text>\n",
            self.h - self.margin + 14.0,
            self.x_range.0,
            self.x_range.1,
            m = self.margin
        );
        let _ = write!(
            s,
            "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"10\">{:.3}..{:.3}</text>\n",
            self.margin + 4.0,
            self.margin - 6.0,
            self.y_range.0,
            self.y_range.1
        );
        s
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Overhead view: desired path (dashed) and actual object path.
pub fn trajectory_svg(log: &RunLog) -> String {
    let actual: Vec<(f64, f64)> = log
        .records
        .iter()
        .map(|r| (r.object.x_p.x, r.object.x_p.y))
        .collect();
    let desired: Vec<(f64, f64)> = log.records.iter().map(|r| (r.desired.x, r.desired.y)).collect();
    let xb = bounds(actual.iter().chain(&desired).map(|p| p.0));
    let yb = bounds(actual.iter().chain(&desired).map(|p| p.1));
    let frame = Frame::new(xb, yb);
    let mut svg = frame.open("object trajectory (overhead)", "x [m]", "y [m]");
    svg.push_str(&frame.polyline(&desired, "#888888", true));
    svg.push_str(&frame.polyline(&actual, "#0057b7", false));
    svg.push_str("</svg>\n");
    svg
}

/// Position- and yaw-error traces against time.
pub fn errors_svg(log: &RunLog) -> String {
    let pos = pos_err_series(log);
    let yaw = yaw_err_series(log);
    let tb = bounds(pos.iter().map(|p| p.0));
    let eb = bounds(pos.iter().chain(&yaw).map(|p| p.1));
    let frame = Frame::new(tb, (0.0f64.min(eb.0), eb.1));
    let mut svg = frame.open(
        "tracking errors (blue: position [m], red: |yaw| [rad])",
        "t [s]",
        "error",
    );
    svg.push_str(&frame.polyline(&pos, "#0057b7", false));
    svg.push_str(&frame.polyline(&yaw, "#c0392b", false));
    svg.push_str("</svg>\n");
    svg
}
