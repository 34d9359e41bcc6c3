//! Objectives to optimize against: synthetic 1-D functions, and a small
//! two-moons MLP that produces real checkpoint pairs to merge.

mod synthetic;
mod toy;

pub use synthetic::{
    eval_synthetic, SyntheticKind, SyntheticObjective, GP_SAMPLE_JITTER, GP_SAMPLE_LENGTH_SCALE,
    GP_SAMPLE_POINTS,
};
pub use toy::{
    bias_name, eval_model, make_toy_checkpoints, weight_name, Samples, SgdConfig, Split, ToyDataset,
    ToyEvaluator, ToyModel, ToyTask,
};
