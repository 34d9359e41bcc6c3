use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Failure, EXIT_IO, EXIT_USAGE};
use crate::baselines::BaselineConfig;
use crate::bayesopt::OptConfig;
use crate::harness::{SgdConfig, ToyModel, ToyTask};

pub const SEED_ENV: &str = "CKMERGE_SEED";

/// Settings shared by the subcommands. A config file holds this structure (or
/// a whole run report, whose `config` field is used), and every run echoes the
/// effective values back into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub seed: Option<u64>,
    pub evaluator: Option<String>,
    pub optimizer: OptConfig,
    pub baseline: BaselineConfig,
    pub task: ToyTask,
    pub model: ToyModel,
    pub training: SgdConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            seed: None,
            evaluator: None,
            optimizer: OptConfig::default(),
            baseline: BaselineConfig::default(),
            task: ToyTask::default(),
            model: ToyModel::default(),
            training: SgdConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(EXIT_IO, format!("cannot read config {}: {e}", path.display())))?;
        let bad = |e: serde_json::Error| Failure::new(EXIT_USAGE, format!("bad config {}: {e}", path.display()));
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
        if value.get("schema_version").is_some() {
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
        }
        serde_json::from_value(value).map_err(bad)
    }

    /// Config file if given, otherwise defaults.
    pub fn from_file(path: Option<&Path>) -> Result<Self, Failure> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Flag, then config file, then the environment, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64, Failure> {
        let seed = match flag.or(self.seed) {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v.trim().parse().map_err(|_| {
                    Failure::new(EXIT_USAGE, format!("{SEED_ENV}={v} is not an unsigned integer"))
                })?,
                Err(_) => 0,
            },
        };
        self.seed = Some(seed);
        self.optimizer.seed = seed;
        self.baseline.seed = seed;
        Ok(seed)
    }
}
