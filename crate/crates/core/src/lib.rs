//! Merge adjacent training checkpoints and search for the merging weight with
//! Gaussian-process Bayesian optimization.
//!
//! ```
//! use ckmerge::{pairwise_merge, Checkpoint, Tensor};
//!
//! let prev = Checkpoint::new().with_tensor("w", Tensor::from_vec(vec![0.0, 2.0])).unwrap();
//! let curr = Checkpoint::new().with_tensor("w", Tensor::from_vec(vec![1.0, 4.0])).unwrap();
//! let merged = pairwise_merge(&prev, &curr, 0.75).unwrap();
//! assert_eq!(merged.get("w").unwrap().data(), &[0.75, 3.5]);
//! ```

pub mod acquisition;
pub mod baselines;
pub mod bayesopt;
pub mod checkpoint;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod gp;
pub mod harness;
mod linalg;
pub mod merge;

pub use bayesopt::{optimize, optimize_merge, OptConfig, OptResult, Portfolio, SearchBounds};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CompatReport, Tensor};
pub use error::{Error, Result};
pub use gp::{gp_fit, gp_posterior, GpModel, KernelParams, KernelPolicy, Observation};
pub use merge::{greedy_soup, pairwise_merge, soup, uniform_soup, MergeWeights};
