//! The three commands behind the `drcbf` binary. Each returns a process
//! exit code; hard errors are printed to stderr by the caller.

use std::path::Path;

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use drcbf_core::sim::{self, ControllerKind, ScenarioConfig, SimError};

use crate::config_io::{self, ManifestOutputs, RunManifest};
use crate::output;
use crate::selftest::{self, InjectedBug};
use crate::{EXIT_SIM_ABORT, EXIT_VALIDATION};

/// Fresh noise draws per logged step for the Monte-Carlo evaluation.
const EVAL_DRAWS: usize = 2000;
/// Seed offset separating evaluation noise from the controller's samples.
const EVAL_SEED_OFFSET: u64 = 0x5eed_0000;

/// Command-line overrides; file values win when `None`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub controller: Option<ControllerKind>,
    pub case: Option<u8>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub horizon: Option<usize>,
    pub timing: bool,
}

fn load_and_validate(scenario_path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, i32> {
    let mut config = match config_io::load_scenario(scenario_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Err(EXIT_VALIDATION);
        }
    };
    config_io::apply_overrides(&mut config, overrides);
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return Err(EXIT_VALIDATION);
    }
    Ok(config)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn eval_seed(config: &ScenarioConfig) -> u64 {
    config.noise.seed.wrapping_add(EVAL_SEED_OFFSET)
}

/// Runs one scenario and writes `trajectory.csv`, `metrics.json`, and
/// `manifest.json` into `out_dir`. Exit codes: 0 success, 2 validation
/// failure, 3 simulation abort.
pub fn cmd_run(scenario_path: &Path, overrides: &Overrides, out_dir: &Path) -> i32 {
    let config = match load_and_validate(scenario_path, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let started_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
    let log = match sim::run_scenario(&config) {
        Ok(log) => log,
        Err(e @ SimError::Config { .. }) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SIM_ABORT;
        }
    };
    let metrics = match sim::monte_carlo_violation_rate(&config, &log, EVAL_DRAWS, eval_seed(&config)) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SIM_ABORT;
        }
    };

    if let Err(e) = std::fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return EXIT_SIM_ABORT;
    }
    let csv_path = out_dir.join("trajectory.csv");
    let metrics_path = out_dir.join("metrics.json");
    let manifest_path = out_dir.join("manifest.json");
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.noise.seed,
        scenario: config.clone(),
        outputs: ManifestOutputs {
            trajectory_csv: csv_path.display().to_string(),
            metrics_json: metrics_path.display().to_string(),
        },
        started_at,
        finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
    };
    let write_all = || -> Result<()> {
        write_file(&csv_path, &output::trajectory_csv(&config, &log))?;
        write_file(&metrics_path, &output::metrics_json(&config, &metrics))?;
        let mut manifest_text = serde_json::to_string_pretty(&manifest)?;
        manifest_text.push('\n');
        write_file(&manifest_path, &manifest_text)?;
        Ok(())
    };
    if let Err(e) = write_all() {
        eprintln!("error: {e:#}");
        return EXIT_SIM_ABORT;
    }
    println!(
        "run {} [{}]: {:?} after {} steps, min clearance {:?}, outputs in {}",
        config.name,
        config.controller,
        log.termination,
        metrics.steps,
        metrics
            .min_clearance
            .iter()
            .map(|c| (c * 1e4).round() / 1e4)
            .collect::<Vec<_>>(),
        out_dir.display()
    );
    0
}

/// Runs both controllers on the same scenario and writes the paired
/// metrics plus a delta report.
pub fn cmd_compare(scenario_path: &Path, overrides: &Overrides, out_dir: &Path) -> i32 {
    let config = match load_and_validate(scenario_path, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let comparison = match sim::compare_controllers(&config, EVAL_DRAWS, eval_seed(&config)) {
        Ok(c) => c,
        Err(e @ SimError::Config { .. }) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SIM_ABORT;
        }
    };
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return EXIT_SIM_ABORT;
    }
    let mut report = comparison.clone();
    if !config.timing_in_outputs {
        for m in [&mut report.cbf, &mut report.drcbf] {
            m.mean_solve_ms = 0.0;
            m.median_solve_ms = 0.0;
        }
    }
    let path = out_dir.join("compare.json");
    let mut text = match serde_json::to_string_pretty(&report) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SIM_ABORT;
        }
    };
    text.push('\n');
    if let Err(e) = write_file(&path, &text) {
        eprintln!("error: {e:#}");
        return EXIT_SIM_ABORT;
    }
    println!(
        "compare {}: clearance deltas (drcbf - cbf) {:?}, report in {}",
        config.name,
        report
            .clearance_delta
            .iter()
            .map(|c| (c * 1e4).round() / 1e4)
            .collect::<Vec<_>>(),
        path.display()
    );
    0
}

/// Runs the oracle self-test suites and prints one pass/fail line each.
pub fn cmd_selftest(quick: bool, inject: Option<InjectedBug>) -> i32 {
    let report = selftest::run_suites(quick, inject);
    for suite in &report.suites {
        if suite.passed {
            println!("suite {:<28} PASS ({})", suite.name, suite.detail);
        } else {
            println!("suite {:<28} FAIL ({})", suite.name, suite.detail);
        }
    }
    if report.all_passed() {
        0
    } else {
        1
    }
}
