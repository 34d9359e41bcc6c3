//! Bayesian optimization of the pairwise merging weight.
//!
//! The loop evaluates both ends of `[alpha, 1]`, then repeatedly fits a GP to
//! every observation, maximizes the acquisition over a dense grid, and
//! evaluates the proposal. The result is the best observation seen.

use serde::{Deserialize, Serialize};

use crate::acquisition::{hedge_update, AcqConfig, Acquisition, HedgeState, HedgeSurface};
use crate::checkpoint::{ensure_compat, Checkpoint};
use crate::error::{Error, Result};
use crate::gp::{GpModel, KernelPolicy, Observation};
use crate::merge::pairwise_merge;

pub const MAX_BUDGET: usize = 1000;
pub const MIN_GRID_RESOLUTION: usize = 101;

/// Search interval `[alpha, upper]`; `upper` is always 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    pub alpha: f64,
    pub upper: f64,
}

impl SearchBounds {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha {alpha} must lie in (0, 1)")));
        }
        Ok(Self { alpha, upper: 1.0 })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.alpha
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.alpha && x <= self.upper
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.alpha, self.upper)
    }

    /// Uniform closed grid; the first point is exactly `alpha` and the last exactly `upper`.
    pub fn grid(&self, resolution: usize) -> Vec<f64> {
        assert!(resolution >= 2, "grid needs at least two points");
        let last = (resolution - 1) as f64;
        (0..resolution)
            .map(|i| {
                let t = i as f64 / last;
                (1.0 - t) * self.alpha + t * self.upper
            })
            .collect()
    }
}

/// Which acquisition drives proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Portfolio {
    #[default]
    Hedge,
    Ei,
    Pi,
    Ucb,
}

impl Portfolio {
    fn single(self) -> Option<Acquisition> {
        match self {
            Portfolio::Hedge => None,
            Portfolio::Ei => Some(Acquisition::Ei),
            Portfolio::Pi => Some(Acquisition::Pi),
            Portfolio::Ucb => Some(Acquisition::Ucb),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    /// Total objective evaluations, including the two endpoints.
    pub budget: usize,
    pub grid_resolution: usize,
    /// Recorded for reproducibility; the loop itself draws no random numbers.
    pub seed: u64,
    pub kernel: KernelPolicy,
    pub acq: AcqConfig,
    pub hedge_eta: f64,
    pub portfolio: Portfolio,
    /// Objective calls averaged per evaluation, for noisy evaluators.
    pub repeats: usize,
    /// Stop after this many consecutive evaluations without a new best.
    pub early_stop: Option<usize>,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            budget: 15,
            grid_resolution: 1001,
            seed: 0,
            kernel: KernelPolicy::default(),
            acq: AcqConfig::default(),
            hedge_eta: 1.0,
            portfolio: Portfolio::Hedge,
            repeats: 1,
            early_stop: None,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.budget < 2 || self.budget > MAX_BUDGET {
            return bad(format!("budget {} outside [2, {MAX_BUDGET}]", self.budget));
        }
        if self.grid_resolution < MIN_GRID_RESOLUTION {
            return bad(format!(
                "grid resolution {} below {MIN_GRID_RESOLUTION}",
                self.grid_resolution
            ));
        }
        if self.budget > self.grid_resolution {
            return bad(format!(
                "budget {} exceeds grid resolution {}",
                self.budget, self.grid_resolution
            ));
        }
        if !(self.hedge_eta > 0.0) {
            return bad(format!("hedge eta {} must be > 0", self.hedge_eta));
        }
        if !(self.acq.beta > 0.0) || !(self.acq.xi >= 0.0) {
            return bad(format!("need beta > 0 and xi >= 0, got {:?}", self.acq));
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeLogEntry {
    /// Index in the trace of the observation this step proposed.
    pub eval_index: usize,
    pub proposal: f64,
    /// Grid argmax of EI, PI and UCB at this step.
    pub nominees: [f64; 3],
    /// Portfolio weights used to pick the proposal.
    pub weights: [f64; 3],
    /// Cumulative rewards after this step's update.
    pub rewards: [f64; 3],
    pub length_scale: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub trace: Vec<Observation>,
    pub best_lambda: f64,
    pub best_value: f64,
    /// Best value after each evaluation.
    pub per_step_best: Vec<f64>,
    pub hedge_log: Vec<HedgeLogEntry>,
}

impl OptResult {
    pub fn new() -> Self {
        Self {
            best_lambda: f64::NAN,
            best_value: f64::NEG_INFINITY,
            ..Default::default()
        }
    }

    /// Appends an observation; ties keep the earlier best.
    pub fn record(&mut self, obs: Observation) {
        if self.trace.is_empty() || obs.value > self.best_value {
            self.best_value = obs.value;
            self.best_lambda = obs.lambda;
        }
        self.trace.push(obs);
        self.per_step_best.push(self.best_value);
    }

    pub fn from_trace(trace: impl IntoIterator<Item = Observation>) -> Self {
        let mut r = Self::new();
        for o in trace {
            r.record(o);
        }
        r
    }

    pub fn evaluated(&self) -> Vec<f64> {
        self.trace.iter().map(|o| o.lambda).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.trace.iter().map(|o| o.value).collect()
    }
}

fn abort(reason: String, partial: &OptResult) -> Error {
    Error::Aborted {
        reason,
        partial: Box::new(partial.clone()),
    }
}

fn evaluate<F>(objective: &mut F, lambda: f64, repeats: usize, res: &mut OptResult) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut total = 0.0;
    for _ in 0..repeats {
        let v = objective(lambda).map_err(|e| abort(format!("objective at {lambda}: {e}"), res))?;
        if !v.is_finite() {
            return Err(abort(format!("objective returned {v} at {lambda}"), res));
        }
        total += v;
    }
    let v = total / repeats as f64;
    res.record(Observation::new(lambda, v));
    Ok(v)
}

fn fit_with_retry(policy: &KernelPolicy, obs: &[Observation], width: f64) -> Result<GpModel> {
    match policy.fit(obs, width) {
        Err(Error::Numerical(_)) => policy.fit_with_noise(obs, width, policy.noise.max(1e-8) * 1e3),
        other => other,
    }
}

/// Grid argmax with ties to the smallest point, skipping already-evaluated points.
///
/// A collision is resolved by moving outward to the nearest free grid point,
/// preferring the higher-scoring side and then the smaller point.
fn pick_from_grid(grid: &[f64], scores: &[f64], evaluated: &[f64]) -> f64 {
    let taken = |i: usize| evaluated.iter().any(|&e| (e - grid[i]).abs() <= 1e-12);
    let top = crate::acquisition::argmax_first(scores);
    if !taken(top) {
        return grid[top];
    }
    for d in 1..grid.len() {
        let left = top.checked_sub(d).filter(|&i| !taken(i));
        let right = Some(top + d).filter(|&i| i < grid.len() && !taken(i));
        match (left, right) {
            (Some(l), Some(r)) => return if scores[r] > scores[l] { grid[r] } else { grid[l] },
            (Some(i), None) | (None, Some(i)) => return grid[i],
            (None, None) => {}
        }
    }
    grid[top]
}

/// Maximizes `acq` over a uniform grid of `resolution` points on the bounds.
pub fn argmax_acquisition<A>(acq: A, bounds: &SearchBounds, resolution: usize) -> f64
where
    A: FnMut(f64) -> f64,
{
    argmax_acquisition_excluding(acq, bounds, resolution, &[])
}

/// Like [`argmax_acquisition`], but never returns a point in `evaluated`.
pub fn argmax_acquisition_excluding<A>(
    acq: A,
    bounds: &SearchBounds,
    resolution: usize,
    evaluated: &[f64],
) -> f64
where
    A: FnMut(f64) -> f64,
{
    let grid = bounds.grid(resolution);
    let scores: Vec<f64> = grid.iter().copied().map(acq).collect();
    pick_from_grid(&grid, &scores, evaluated)
}

pub fn optimize<F>(mut objective: F, bounds: &SearchBounds, cfg: &OptConfig) -> Result<OptResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    cfg.validate()?;
    let mut res = OptResult::new();
    evaluate(&mut objective, bounds.alpha, cfg.repeats, &mut res)?;
    evaluate(&mut objective, bounds.upper, cfg.repeats, &mut res)?;

    let grid = bounds.grid(cfg.grid_resolution);
    let width = bounds.width();
    let mut state = HedgeState::new(cfg.hedge_eta);
    let mut stale = 0usize;

    while res.trace.len() < cfg.budget {
        let model = fit_with_retry(&cfg.kernel, &res.trace, width)
            .map_err(|e| abort(format!("surrogate fit failed: {e}"), &res))?;
        let surface = HedgeSurface::new(&model, &state, &cfg.acq, res.best_value, &grid);
        let scores = match cfg.portfolio.single() {
            None => surface.combined(),
            Some(a) => surface.raw(a).to_vec(),
        };
        let proposal = pick_from_grid(&grid, &scores, &res.evaluated());

        let before = res.best_value;
        evaluate(&mut objective, proposal, cfg.repeats, &mut res)?;

        if cfg.portfolio == Portfolio::Hedge {
            let refit = fit_with_retry(&cfg.kernel, &res.trace, width)
                .map_err(|e| abort(format!("surrogate refit failed: {e}"), &res))?;
            let nominees = surface.nominees();
            let weights = surface.weights();
            state = hedge_update(&state, &refit, nominees);
            res.hedge_log.push(HedgeLogEntry {
                eval_index: res.trace.len() - 1,
                proposal,
                nominees,
                weights,
                rewards: state.rewards,
                length_scale: model.params().length_scale,
            });
        }

        if res.best_value > before {
            stale = 0;
        } else {
            stale += 1;
        }
        if cfg.early_stop.is_some_and(|s| stale >= s) {
            break;
        }
    }
    Ok(res)
}

/// Optimizes `evaluator(pairwise_merge(prev, curr, lambda))` and returns the
/// merged checkpoint at the best weight along with the trace.
pub fn optimize_merge<E>(
    prev: &Checkpoint,
    curr: &Checkpoint,
    mut evaluator: E,
    bounds: &SearchBounds,
    cfg: &OptConfig,
) -> Result<(Checkpoint, OptResult)>
where
    E: FnMut(&Checkpoint) -> Result<f64>,
{
    ensure_compat(prev, curr)?;
    let res = optimize(
        |lambda| evaluator(&pairwise_merge(prev, curr, lambda)?),
        bounds,
        cfg,
    )?;
    let merged = pairwise_merge(prev, curr, res.best_lambda)?;
    Ok((merged, res))
}
