//! Scenario engine, telemetry export, and selftest suites for the planar
//! collaborative manipulation stack.

pub mod export;
pub mod metrics;
pub mod scenario;
pub mod selftest;
pub mod sim;
