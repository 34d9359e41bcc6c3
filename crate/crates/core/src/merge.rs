//! Convex combinations of checkpoints.
//!
//! All arithmetic runs in `f64` and each output element is rounded to `f32`
//! exactly once. Tensors are merged one at a time.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{ensure_compat, Checkpoint, Tensor};
use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Non-negative weights summing to one, one per checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeWeights(Vec<f64>);

impl MergeWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Weight("no weights given".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Weight(format!("weight {w} is negative or non-finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Weight(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("uniform weights over zero checkpoints"));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `lambda * curr + (1 - lambda) * prev`, element-wise.
pub fn pairwise_merge(prev: &Checkpoint, curr: &Checkpoint, lambda: f64) -> Result<Checkpoint> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Weight(format!("lambda {lambda} outside [0, 1]")));
    }
    ensure_compat(prev, curr)?;
    // Exact endpoints keep signed zeros intact.
    if lambda == 1.0 {
        return Ok(strip_meta(curr));
    }
    if lambda == 0.0 {
        return Ok(strip_meta(prev));
    }
    let keep = 1.0 - lambda;
    let mut out = Checkpoint::new();
    for (name, tp) in prev.iter() {
        let tc = curr.get(name).expect("checked by ensure_compat");
        let data = tp
            .data()
            .iter()
            .zip(tc.data())
            .map(|(&p, &c)| (lambda * c as f64 + keep * p as f64) as f32)
            .collect();
        out.insert(name.clone(), Tensor::new(tp.shape().to_vec(), data)?)?;
    }
    Ok(out)
}

fn strip_meta(c: &Checkpoint) -> Checkpoint {
    let mut out = Checkpoint::new();
    for (name, t) in c.iter() {
        out.insert(name.clone(), t.clone()).expect("names already valid");
    }
    out
}

/// Weighted sum of any number of compatible checkpoints.
pub fn soup(ckpts: &[Checkpoint], weights: &MergeWeights) -> Result<Checkpoint> {
    let first = ckpts
        .first()
        .ok_or(Error::EmptyInput("soup of zero checkpoints"))?;
    if weights.len() != ckpts.len() {
        return Err(Error::Weight(format!(
            "{} weights for {} checkpoints",
            weights.len(),
            ckpts.len()
        )));
    }
    for c in &ckpts[1..] {
        ensure_compat(first, c)?;
    }

    let mut out = Checkpoint::new();
    let mut acc: Vec<f64> = Vec::new();
    for (name, t0) in first.iter() {
        acc.clear();
        acc.resize(t0.numel(), 0.0);
        for (c, &w) in ckpts.iter().zip(weights.as_slice()) {
            let t = c.get(name).expect("checked by ensure_compat");
            for (a, &v) in acc.iter_mut().zip(t.data()) {
                *a += w * v as f64;
            }
        }
        let data = acc.iter().map(|&v| v as f32).collect();
        out.insert(name.clone(), Tensor::new(t0.shape().to_vec(), data)?)?;
    }
    Ok(out)
}

pub fn uniform_soup(ckpts: &[Checkpoint]) -> Result<Checkpoint> {
    if ckpts.is_empty() {
        return Err(Error::EmptyInput("uniform soup of zero checkpoints"));
    }
    soup(ckpts, &MergeWeights::uniform(ckpts.len())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupStep {
    /// Position of the checkpoint in the input list.
    pub index: usize,
    /// Score of the candidate soup that included this checkpoint.
    pub score: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SoupTrace {
    pub considered: Vec<SoupStep>,
    pub final_members: Vec<usize>,
    /// Score of the returned soup.
    pub final_score: f64,
}

/// Greedy soup: visit checkpoints in order and keep one only if the uniform
/// average of the kept set plus the candidate scores strictly higher.
pub fn greedy_soup<F>(ckpts: &[Checkpoint], mut evaluator: F) -> Result<(Checkpoint, SoupTrace)>
where
    F: FnMut(&Checkpoint) -> Result<f64>,
{
    let first = ckpts
        .first()
        .ok_or(Error::EmptyInput("greedy soup of zero checkpoints"))?;
    for c in &ckpts[1..] {
        ensure_compat(first, c)?;
    }

    let mut current = strip_meta(first);
    let mut best = evaluator(&current)?;
    let mut members = vec![0usize];
    let mut trace = SoupTrace {
        considered: vec![SoupStep {
            index: 0,
            score: best,
            accepted: true,
        }],
        ..Default::default()
    };

    for (i, cand) in ckpts.iter().enumerate().skip(1) {
        let pool: Vec<Checkpoint> = members
            .iter()
            .map(|&m| ckpts[m].clone())
            .chain(std::iter::once(cand.clone()))
            .collect();
        let candidate = uniform_soup(&pool)?;
        let score = evaluator(&candidate)?;
        let accepted = score > best;
        trace.considered.push(SoupStep {
            index: i,
            score,
            accepted,
        });
        if accepted {
            members.push(i);
            current = candidate;
            best = score;
        }
    }
    trace.final_members = members;
    trace.final_score = best;
    Ok((current, trace))
}
