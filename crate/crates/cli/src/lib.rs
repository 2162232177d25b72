//! Library surface of the CLI: config-file loading and the run entry point,
//! shared by the binary and the acceptance suite.

pub mod guests;

use anyhow::{Context, Result};
use rvcycle_core::config::SimConfig;
use rvcycle_core::machine::Machine;
use rvcycle_core::sched::{self, RunOutcome};
use std::path::Path;

/// Load a TOML config file.
pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: SimConfig = toml::from_str(&text).context("parsing config")?;
    Ok(cfg)
}

/// Run an in-memory image under a validated config; returns the finished
/// machine (architectural state inspection) and the run outcome.
pub fn run_image(cfg: SimConfig, image: &[u8], echo_console: bool) -> Result<(Machine, RunOutcome)> {
    let mut m = Machine::with_console(cfg, image, echo_console)?;
    let out = sched::run(&mut m);
    Ok((m, out))
}

/// Convenience for tests: run and fail on simulator-level errors.
pub fn run_ok(cfg: SimConfig, image: &[u8]) -> (Machine, RunOutcome) {
    let (m, out) = run_image(cfg, image, false).expect("image loads");
    if let Some(f) = &out.fatal {
        panic!("simulation failed: {f}");
    }
    (m, out)
}
