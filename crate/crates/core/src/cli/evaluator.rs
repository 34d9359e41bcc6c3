use std::path::PathBuf;
use std::str::FromStr;

use super::{Failure, EXIT_USAGE};
use crate::checkpoint::{load_checkpoint, Checkpoint};
use crate::diagnostics::merge_distance;
use crate::error::{Error, Result};
use crate::harness::{Split, SyntheticObjective, ToyEvaluator, ToyModel, ToyTask};
use crate::merge::pairwise_merge;

/// Parsed `--evaluator` value.
///
/// * `toy[:dev|test[:fraction]]` accuracy of the toy MLP on the configured task
/// * `l2:<path>` negative squared distance to a target checkpoint
/// * `const:<value>`
/// * any synthetic objective (`quadratic-peak:0.9`, `gp-sample:3`, ...), a
///   function of the merging weight alone
#[derive(Debug, Clone, PartialEq)]
pub enum EvaluatorSpec {
    Toy { split: Split, fraction: f64 },
    L2(PathBuf),
    Const(f64),
    Synthetic(String),
}

impl FromStr for EvaluatorSpec {
    type Err = Failure;

    fn from_str(s: &str) -> Result<Self, Failure> {
        let usage = |m: String| Failure::new(EXIT_USAGE, m);
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        match head {
            "toy" => {
                let mut parts = rest.split(':').filter(|p| !p.is_empty());
                let split = match parts.next() {
                    None | Some("dev") => Split::Dev,
                    Some("test") => Split::Test,
                    Some(o) => return Err(usage(format!("toy split must be dev or test, got `{o}`"))),
                };
                let fraction = match parts.next() {
                    None => 1.0,
                    Some(f) => f
                        .parse::<f64>()
                        .ok()
                        .filter(|f| *f > 0.0 && *f <= 1.0)
                        .ok_or_else(|| usage(format!("toy fraction `{f}` must be in (0, 1]")))?,
                };
                Ok(Self::Toy { split, fraction })
            }
            "l2" if !rest.is_empty() => Ok(Self::L2(PathBuf::from(rest))),
            "const" => rest
                .parse()
                .map(Self::Const)
                .map_err(|_| usage(format!("const evaluator needs a number, got `{rest}`"))),
            _ => {
                SyntheticObjective::from_str(s).map_err(|e| usage(format!("unknown evaluator `{s}`: {e}")))?;
                Ok(Self::Synthetic(s.to_string()))
            }
        }
    }
}

/// A loaded evaluator.
#[derive(Debug, Clone)]
pub enum Evaluator {
    Toy(Box<ToyEvaluator>),
    L2(Checkpoint),
    Const(f64),
    Synthetic(SyntheticObjective),
}

impl Evaluator {
    /// `seed` replaces the seed of a bare `gp-sample` spec.
    pub fn build(spec: &EvaluatorSpec, task: &ToyTask, model: &ToyModel, seed: Option<u64>) -> Result<Self> {
        Ok(match spec {
            EvaluatorSpec::Toy { split, fraction } => {
                Self::Toy(Box::new(ToyEvaluator::new(task, model.clone(), *split, *fraction)?))
            }
            EvaluatorSpec::L2(path) => Self::L2(load_checkpoint(path)?),
            EvaluatorSpec::Const(v) => Self::Const(*v),
            EvaluatorSpec::Synthetic(s) => match (s.as_str(), seed) {
                ("gp-sample", Some(seed)) => Self::Synthetic(SyntheticObjective::gp_sample(seed)?),
                _ => Self::Synthetic(s.parse()?),
            },
        })
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self, Self::Synthetic(_))
    }

    pub fn eval_checkpoint(&self, ckpt: &Checkpoint) -> Result<f64> {
        match self {
            Self::Toy(t) => t.eval(ckpt),
            Self::L2(target) => Ok(-merge_distance(ckpt, target)?),
            Self::Const(v) => Ok(*v),
            Self::Synthetic(s) => Err(Error::Objective(format!(
                "synthetic objective `{s}` scores merging weights, not checkpoints"
            ))),
        }
    }

    /// Score of the weight `lambda`, merging the pair when one is given.
    pub fn eval_lambda(&self, pair: Option<(&Checkpoint, &Checkpoint)>, lambda: f64) -> Result<f64> {
        match (self, pair) {
            (Self::Synthetic(s), _) => Ok(s.eval(lambda)),
            (Self::Const(v), None) => Ok(*v),
            (_, Some((prev, curr))) => self.eval_checkpoint(&pairwise_merge(prev, curr, lambda)?),
            (_, None) => Err(Error::Objective(
                "this evaluator scores checkpoints; pass --prev and --curr".into(),
            )),
        }
    }
}
