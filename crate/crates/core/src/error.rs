use thiserror::Error;

use crate::bayesopt::OptResult;
use crate::checkpoint::CompatReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("validation error in tensor `{tensor}`: {detail}")]
    Validation { tensor: String, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("incompatible checkpoints: {0}")]
    Compat(CompatReport),

    #[error("invalid merge weights: {0}")]
    Weight(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("duplicate observation at lambda = {0} with zero noise")]
    Duplicate(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Training { step: usize, loss: f64 },

    #[error("trajectory diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("objective failed: {0}")]
    Objective(String),

    /// An optimization run stopped early; the observations gathered so far are kept.
    #[error("optimization aborted after {} evaluations: {reason}", partial.trace.len())]
    Aborted {
        reason: String,
        partial: Box<OptResult>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
