//! File writers for trajectories and metrics. Floating-point values go
//! through Rust's shortest-roundtrip formatting, so identical computations
//! produce identical bytes. Timing channels are zeroed unless the scenario
//! opts into timing, keeping default outputs reproducible.

use std::fmt::Write as _;

use drcbf_core::barrier::Fallback;
use drcbf_core::sim::{MetricsSummary, ScenarioConfig, TrajectoryLog};

fn fallback_label(f: Fallback) -> &'static str {
    match f {
        Fallback::None => "ok",
        Fallback::SafetyOnly => "fallback_safety",
        Fallback::MinViolation => "fallback_violation",
    }
}

/// Renders the per-step trajectory CSV. Columns: `t`, the plant's state
/// labels, its control labels, one `h_i` and one `cvar_i` per obstacle,
/// `status`, `solve_ms`.
pub fn trajectory_csv(config: &ScenarioConfig, log: &TrajectoryLog) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend(config.plant.state_labels().iter().map(|s| s.to_string()));
    header.extend(config.plant.control_labels().iter().map(|s| s.to_string()));
    for i in 0..config.obstacles.len() {
        header.push(format!("h_{i}"));
    }
    for i in 0..config.obstacles.len() {
        header.push(format!("cvar_{i}"));
    }
    header.push("status".into());
    header.push("solve_ms".into());
    out.push_str(&header.join(","));
    out.push('\n');

    for record in &log.records {
        let mut row = String::new();
        write!(row, "{}", record.t).unwrap();
        for v in record.state.iter().chain(&record.control) {
            write!(row, ",{v}").unwrap();
        }
        for v in record.h_values.iter().chain(&record.cvar_values) {
            write!(row, ",{v}").unwrap();
        }
        let solve_ms = if config.timing_in_outputs {
            record.solve_ms
        } else {
            0.0
        };
        write!(row, ",{},{}", fallback_label(record.fallback), solve_ms).unwrap();
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Renders the metrics JSON, zeroing the timing statistics unless the
/// scenario opts into timing.
pub fn metrics_json(config: &ScenarioConfig, metrics: &MetricsSummary) -> String {
    let mut metrics = metrics.clone();
    if !config.timing_in_outputs {
        metrics.mean_solve_ms = 0.0;
        metrics.median_solve_ms = 0.0;
    }
    let mut text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    text.push('\n');
    text
}
