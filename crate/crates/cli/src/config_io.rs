//! Scenario file loading, manifest-aware, with field-path error messages
//! and command-line overrides.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use drcbf_core::sim::{ControllerKind, ScenarioConfig};
use serde::{Deserialize, Serialize};

use crate::commands::Overrides;

/// Written next to every run's outputs; feeding it back to `run` reproduces
/// the outputs bitwise (timestamps aside, which live only in the manifest).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub outputs: ManifestOutputs,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestOutputs {
    pub trajectory_csv: String,
    pub metrics_json: String,
}

/// Loads a scenario from either a scenario file or a run manifest (detected
/// by its `scenario` field).
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario file {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))?;
    let scenario_value = if value.get("scenario").is_some() {
        value
            .get("scenario")
            .cloned()
            .expect("checked above")
    } else {
        value
    };
    let deserializer = scenario_value.clone();
    serde_path_to_error::deserialize(deserializer).map_err(|e| {
        anyhow!(
            "{}: invalid scenario at `{}`: {}",
            path.display(),
            e.path(),
            e.inner()
        )
    })
}

/// Applies command-line overrides on top of the file values.
pub fn apply_overrides(config: &mut ScenarioConfig, overrides: &Overrides) {
    if let Some(controller) = overrides.controller {
        config.controller = controller;
    }
    if let Some(case) = overrides.case {
        config.ambiguity.case = case;
    }
    if let Some(alpha) = overrides.alpha {
        config.ambiguity.alpha = alpha;
    }
    if let Some(lambda) = overrides.lambda {
        config.ambiguity.lambda = lambda;
    }
    if let Some(samples) = overrides.samples {
        config.noise.count = samples;
    }
    if let Some(seed) = overrides.seed {
        config.noise.seed = seed;
    }
    if let Some(dt) = overrides.dt {
        config.dt = dt;
    }
    if let Some(horizon) = overrides.horizon {
        config.horizon = horizon;
    }
    if overrides.timing {
        config.timing_in_outputs = true;
    }
}

pub fn parse_controller(s: &str) -> Result<ControllerKind> {
    match s {
        "cbf" => Ok(ControllerKind::Cbf),
        "drcbf" => Ok(ControllerKind::Drcbf),
        other => Err(anyhow!("unknown controller `{other}` (expected cbf or drcbf)")),
    }
}
