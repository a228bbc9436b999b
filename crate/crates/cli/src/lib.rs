//! Experiment runner: configuration, scenarios, run outputs and comparisons.

pub mod compare;
pub mod config;
pub mod output;
pub mod scenarios;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;

use crate::config::ExperimentConfig;
use crate::output::{plot_script, write_atomic, RunManifest};
use crate::scenarios::{Plan, RunOutput};

/// Environment variable naming the directory that run outputs go under.
pub const OUTPUT_ROOT_ENV: &str = "ENSEMBLE_LAB_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `explicit`, else the environment variable, else `runs`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// A finished run: its directory and manifest.
#[derive(Debug, Clone)]
pub struct Finished {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

/// Validates the configuration, runs the scenario and writes its directory
/// `<root>/<output.dir>` (default: the scenario name).
pub fn run_config(cfg: &ExperimentConfig, root: &Path) -> Result<Finished> {
    let plan = Plan::from_config(cfg)?;
    let dir = root.join(cfg.get("output", "dir", cfg.scenario.clone())?);
    let out = plan.run()?;
    let manifest = write_run(&dir, cfg, &cfg.scenario, &out)?;
    Ok(Finished { dir, manifest })
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, scenario: &str, out: &RunOutput) -> Result<RunManifest> {
    let mut outputs = Vec::new();
    for (name, table) in &out.tables {
        write_atomic(&dir.join(name), &table.to_csv()?)?;
        outputs.push(name.clone());
    }
    let csvs = outputs.clone();
    for (name, child) in &out.children {
        let m = write_run(&dir.join(name), cfg, name, child)?;
        outputs.extend(m.outputs.iter().map(|o| format!("{name}/{o}")));
    }
    write_atomic(&dir.join("plot.py"), plot_script(&csvs).as_bytes())?;
    outputs.push("plot.py".into());
    let tolerances: BTreeMap<String, f64> = out.checks.iter().map(|c| (c.name.clone(), c.tolerance)).collect();
    let manifest = RunManifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        scenario: scenario.into(),
        seed: cfg.seed,
        config: cfg.echo(),
        tolerances,
        outputs,
        wall_clock_seconds: out.wall_clock_seconds,
        checks: out.checks.clone(),
        passed: out.checks.iter().all(|c| c.passed),
    };
    manifest.write(dir)?;
    Ok(manifest)
}
