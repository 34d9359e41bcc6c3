use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::{Failure, EXIT_IO, EXIT_USAGE};
use crate::bayesopt::{HedgeLogEntry, OptResult};
use crate::gp::Observation;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub prev: Option<String>,
    pub curr: Option<String>,
    pub report: Option<String>,
    pub checkpoint: Option<String>,
}

/// Wall-clock times; the only fields that differ between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    /// `completed`, or `aborted` for a partial trace.
    pub status: String,
    pub error: Option<String>,
    pub seed: u64,
    pub config: RunConfig,
    pub trace: Vec<Observation>,
    pub best_lambda: Option<f64>,
    pub best_value: Option<f64>,
    pub per_step_best: Vec<f64>,
    pub hedge_log: Vec<HedgeLogEntry>,
    pub artifacts: Artifacts,
    pub timing: Timing,
}

impl RunReport {
    pub fn new(command: &str, config: &RunConfig, result: &OptResult, artifacts: Artifacts) -> Self {
        let has = !result.trace.is_empty();
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            status: "completed".into(),
            error: None,
            seed: config.seed.unwrap_or(0),
            config: config.clone(),
            trace: result.trace.clone(),
            best_lambda: has.then_some(result.best_lambda),
            best_value: has.then_some(result.best_value),
            per_step_best: result.per_step_best.clone(),
            hedge_log: result.hedge_log.clone(),
            artifacts,
            timing: Timing { total_seconds: 0.0 },
        }
    }

    pub fn result(&self) -> OptResult {
        let mut r = OptResult::from_trace(self.trace.iter().copied());
        r.hedge_log = self.hedge_log.clone();
        r
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot write report {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot read report {}: {e}", path.display())))?;
        let report: Self = serde_json::from_str(&text)
            .map_err(|e| Failure::new(EXIT_USAGE, format!("bad report {}: {e}", path.display())))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Failure::new(
                EXIT_USAGE,
                format!("report schema version {} is not {SCHEMA_VERSION}", report.schema_version),
            ));
        }
        Ok(report)
    }
}
