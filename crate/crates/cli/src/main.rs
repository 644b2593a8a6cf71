use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use comanip_cli::export;
use comanip_cli::metrics::metrics;
use comanip_cli::scenario::{AllocatorKind, ControllerKind, ScenarioConfig};
use comanip_cli::selftest::run_selftest;
use comanip_cli::sim::run_scenario;

/// Planar multi-agent collaborative manipulation: closed-loop scenario
/// engine with adaptive/PD object control, QP/heuristic force allocation,
/// and per-agent MPC.
#[derive(Parser)]
#[command(name = "comanip", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and export its telemetry.
    Run {
        /// Scenario TOML file.
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory for run.csv / summary.json.
        #[arg(long)]
        out: PathBuf,
        /// Override the object-level controller.
        #[arg(long, value_enum)]
        controller: Option<ControllerKind>,
        /// Override the force allocator.
        #[arg(long, value_enum)]
        allocator: Option<AllocatorKind>,
        /// Override the run length, s.
        #[arg(long)]
        duration: Option<f64>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Run every controller/allocator variant of a scenario side by side.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant suites.
    Selftest,
}

fn load_with_overrides(
    path: &PathBuf,
    controller: Option<ControllerKind>,
    allocator: Option<AllocatorKind>,
    duration: Option<f64>,
    seed: Option<u64>,
) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::from_file(path)
        .with_context(|| format!("loading scenario {}", path.display()))?;
    if let Some(c) = controller {
        cfg.controller.kind = c;
    }
    if let Some(a) = allocator {
        cfg.allocator.kind = a;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_metrics(label: &str, m: &comanip_cli::metrics::Metrics) {
    println!(
        "{label}: rms_pos {:.4} m | final_pos {:.4} m | rms_yaw {:.4} rad | contact losses {} | agent sat duty {:.2}% | alloc relaxed {:.2}%",
        m.rms_pos_err,
        m.final_pos_err,
        m.rms_yaw_err,
        m.contact_losses,
        100.0 * m.agent_saturation_duty,
        100.0 * m.alloc_relaxed_fraction,
    );
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            out,
            controller,
            allocator,
            duration,
            seed,
            plots,
        } => {
            let cfg = load_with_overrides(&scenario, controller, allocator, duration, seed)?;
            let log = run_scenario(&cfg).context("scenario run failed")?;
            export::export(&log, &out, plots)?;
            print_metrics("run", &metrics(&log));
            println!("wrote {}", out.join("run.csv").display());
        }
        Command::Compare { scenario, out } => {
            let variants = [
                ("adaptive_qp", ControllerKind::Adaptive, AllocatorKind::Qp),
                ("pd_qp", ControllerKind::Pd, AllocatorKind::Qp),
                (
                    "adaptive_heuristic",
                    ControllerKind::Adaptive,
                    AllocatorKind::Heuristic,
                ),
                ("pd_heuristic", ControllerKind::Pd, AllocatorKind::Heuristic),
            ];
            let mut rows = Vec::new();
            for (name, ctrl, alloc) in variants {
                let cfg = load_with_overrides(&scenario, Some(ctrl), Some(alloc), None, None)?;
                let log = run_scenario(&cfg)
                    .with_context(|| format!("variant {name} failed"))?;
                let m = metrics(&log);
                export::export(&log, &out.join(name), false)?;
                print_metrics(name, &m);
                rows.push(serde_json::json!({ "variant": name, "metrics": m }));
            }
            let compare = serde_json::json!({
                "build_id": export::build_id(),
                "scenario": scenario.display().to_string(),
                "variants": rows,
            });
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("compare.json"),
                serde_json::to_string_pretty(&compare)?,
            )?;
            println!("wrote {}", out.join("compare.json").display());
        }
        Command::Selftest => {
            let failures = run_selftest();
            if failures > 0 {
                anyhow::bail!("{failures} selftest suite(s) failed");
            }
            println!("all selftest suites passed");
        }
    }
    Ok(())
}
