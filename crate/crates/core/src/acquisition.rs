//! Acquisition functions (EI, PI, UCB) and the GP-Hedge portfolio.
//!
//! Everything is written for maximization. A zero posterior standard deviation
//! is handled by the analytic limit of each formula.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::gp::GpModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcqConfig {
    /// UCB exploration weight.
    pub beta: f64,
    /// Improvement margin for EI and PI.
    pub xi: f64,
}

impl Default for AcqConfig {
    fn default() -> Self {
        Self { beta: 2.0, xi: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acquisition {
    Ei,
    Pi,
    Ucb,
}

impl Acquisition {
    pub const ALL: [Acquisition; 3] = [Acquisition::Ei, Acquisition::Pi, Acquisition::Ucb];

    pub fn name(self) -> &'static str {
        match self {
            Acquisition::Ei => "ei",
            Acquisition::Pi => "pi",
            Acquisition::Ucb => "ucb",
        }
    }

    pub fn eval(self, mean: f64, variance: f64, best: f64, cfg: &AcqConfig) -> f64 {
        match self {
            Acquisition::Ei => expected_improvement(mean, variance, best, cfg),
            Acquisition::Pi => probability_of_improvement(mean, variance, best, cfg),
            Acquisition::Ucb => ucb(mean, variance, cfg),
        }
    }
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn expected_improvement(mean: f64, variance: f64, best: f64, cfg: &AcqConfig) -> f64 {
    let gap = mean - best - cfg.xi;
    let sigma = variance.max(0.0).sqrt();
    if sigma == 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * std_normal_cdf(z) + sigma * std_normal_pdf(z)).max(0.0)
}

pub fn probability_of_improvement(mean: f64, variance: f64, best: f64, cfg: &AcqConfig) -> f64 {
    let gap = mean - best - cfg.xi;
    let sigma = variance.max(0.0).sqrt();
    if sigma == 0.0 {
        return if gap > 0.0 { 1.0 } else { 0.0 };
    }
    std_normal_cdf(gap / sigma)
}

pub fn ucb(mean: f64, variance: f64, cfg: &AcqConfig) -> f64 {
    mean + cfg.beta * variance.max(0.0).sqrt()
}

/// Cumulative rewards for EI, PI and UCB, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeState {
    pub rewards: [f64; 3],
    pub eta: f64,
    pub step: u64,
}

impl HedgeState {
    pub fn new(eta: f64) -> Self {
        Self {
            rewards: [0.0; 3],
            eta,
            step: 0,
        }
    }
}

/// Softmax of `eta * rewards`.
pub fn hedge_weights(state: &HedgeState) -> [f64; 3] {
    let scaled = state.rewards.map(|r| state.eta * r);
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Overflowed entries share all the mass.
    let exps = scaled.map(|s| if max == f64::INFINITY { f64::from(u8::from(s == max)) } else { (s - max).exp() });
    let total: f64 = exps.iter().sum();
    exps.map(|e| e / total)
}

/// Raw acquisition values over one step's candidate grid, with the min-max
/// ranges used to put EI, PI and UCB on a common [0, 1] scale.
#[derive(Debug, Clone)]
pub struct HedgeSurface {
    grid: Vec<f64>,
    raw: [Vec<f64>; 3],
    ranges: [(f64, f64); 3],
    weights: [f64; 3],
    best: f64,
    cfg: AcqConfig,
}

impl HedgeSurface {
    pub fn new(
        model: &GpModel,
        state: &HedgeState,
        cfg: &AcqConfig,
        best: f64,
        grid: &[f64],
    ) -> Self {
        let posts: Vec<(f64, f64)> = grid.iter().map(|&x| model.posterior(x)).collect();
        let raw = Acquisition::ALL.map(|a| {
            posts
                .iter()
                .map(|&(m, v)| a.eval(m, v, best, cfg))
                .collect::<Vec<_>>()
        });
        let ranges = [0, 1, 2].map(|i| {
            raw[i]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        });
        Self {
            grid: grid.to_vec(),
            raw,
            ranges,
            weights: hedge_weights(state),
            best,
            cfg: *cfg,
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weights(&self) -> [f64; 3] {
        self.weights
    }

    pub fn raw(&self, acq: Acquisition) -> &[f64] {
        &self.raw[acq as usize]
    }

    fn normalize(&self, i: usize, v: f64) -> f64 {
        let (lo, hi) = self.ranges[i];
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    /// Normalized values of one acquisition over the grid.
    pub fn normalized(&self, acq: Acquisition) -> Vec<f64> {
        let i = acq as usize;
        self.raw[i].iter().map(|&v| self.normalize(i, v)).collect()
    }

    /// Weighted combination over the grid.
    pub fn combined(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|g| (0..3).map(|i| self.weights[i] * self.normalize(i, self.raw[i][g])).sum())
            .collect()
    }

    /// Weighted combination at an arbitrary point, normalized with this step's grid ranges.
    pub fn value_at(&self, model: &GpModel, x: f64) -> f64 {
        let (m, v) = model.posterior(x);
        Acquisition::ALL
            .iter()
            .enumerate()
            .map(|(i, a)| self.weights[i] * self.normalize(i, a.eval(m, v, self.best, &self.cfg)))
            .sum()
    }

    /// Grid argmax of each raw acquisition (EI, PI, UCB); ties go to the smallest point.
    pub fn nominees(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.grid[argmax_first(&self.raw[i])])
    }
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// GP-Hedge acquisition value at `x`, each component normalized over `grid`.
pub fn hedge_acquisition(
    model: &GpModel,
    state: &HedgeState,
    cfg: &AcqConfig,
    best: f64,
    grid: &[f64],
    x: f64,
) -> f64 {
    HedgeSurface::new(model, state, cfg, best, grid).value_at(model, x)
}

/// Adds the refitted posterior mean at each acquisition's nominee to its reward.
pub fn hedge_update(state: &HedgeState, model: &GpModel, nominees: [f64; 3]) -> HedgeState {
    let mut next = *state;
    for (r, x) in next.rewards.iter_mut().zip(nominees) {
        *r += model.posterior(x).0;
    }
    next.step += 1;
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{gp_fit, KernelParams, Observation};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CFG: AcqConfig = AcqConfig { beta: 2.0, xi: 0.0 };

    fn model() -> GpModel {
        let obs = [
            Observation::new(0.5, 0.2),
            Observation::new(0.7, 0.6),
            Observation::new(1.0, 0.4),
        ];
        gp_fit(&obs, KernelParams::new(0.05, 0.1, 1e-6).unwrap(), 0.4).unwrap()
    }

    fn grid() -> Vec<f64> {
        (0..101).map(|i| 0.5 + 0.005 * i as f64).collect()
    }

    #[test]
    fn ei_closed_form_points() {
        assert_eq!(expected_improvement(0.3, 0.0, 0.5, &CFG), 0.0);
        assert_eq!(expected_improvement(0.5, 0.0, 0.5, &CFG), 0.0);
        assert_eq!(expected_improvement(0.7, 0.0, 0.5, &CFG), 0.7 - 0.5);
        let v = expected_improvement(1.0, 1.0, 1.0, &CFG);
        assert!((v - 0.398_942_280_4).abs() < 1e-9);
    }

    #[test]
    fn pi_closed_form_points() {
        assert_eq!(probability_of_improvement(1.0, 0.3, 1.0, &CFG), 0.5);
        let v = probability_of_improvement(2.0, 1.0, 0.0, &CFG);
        assert!((v - 0.977_249_868).abs() < 1e-8);
        assert_eq!(probability_of_improvement(2.0, 0.0, 1.0, &CFG), 1.0);
        assert_eq!(probability_of_improvement(1.0, 0.0, 1.0, &CFG), 0.0);
    }

    #[test]
    fn ucb_cases() {
        assert!((ucb(0.5, 0.01, &CFG) - 0.7).abs() < 1e-12);
        assert_eq!(ucb(0.5, 0.0, &CFG), 0.5);
        let zero_beta = AcqConfig { beta: 0.0, xi: 0.0 };
        assert_eq!(ucb(0.5, 9.0, &zero_beta), 0.5);
    }

    #[test]
    fn ei_and_pi_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..200_000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        for (gap, sigma) in [(-0.3, 0.4), (0.0, 0.2), (0.25, 0.5)] {
            let (mut ei, mut pi) = (0.0, 0.0);
            for z in &draws {
                let f = gap + sigma * z;
                ei += f.max(0.0);
                pi += if f > 0.0 { 1.0 } else { 0.0 };
            }
            ei /= draws.len() as f64;
            pi /= draws.len() as f64;
            assert!((expected_improvement(gap, sigma * sigma, 0.0, &CFG) - ei).abs() < 4e-3);
            assert!((probability_of_improvement(gap, sigma * sigma, 0.0, &CFG) - pi).abs() < 4e-3);
        }
    }

    #[test]
    fn hedge_weight_cases() {
        let w = hedge_weights(&HedgeState::new(1.0));
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = HedgeState {
            rewards: [1.0, 0.0, 0.0],
            eta: std::f64::consts::LN_2,
            step: 0,
        };
        let w = hedge_weights(&s);
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[1] - 0.25).abs() < 1e-12);
        assert!((w[2] - 0.25).abs() < 1e-12);
        let huge = HedgeState {
            rewards: [1e308, 0.0, -1e308],
            eta: 10.0,
            step: 0,
        };
        let w = hedge_weights(&huge);
        assert!(w.iter().all(|x| x.is_finite()));
        assert_eq!(w[0], 1.0);
    }

    #[test]
    fn hedge_equal_components_give_common_value() {
        let m = model();
        let g = grid();
        let s = HedgeSurface::new(&m, &HedgeState::new(1.0), &CFG, 0.6, &g);
        let norm = Acquisition::ALL.map(|a| s.normalized(a));
        let combined = s.combined();
        for i in 0..g.len() {
            let recomposed: f64 = norm.iter().map(|n| n[i] / 3.0).sum();
            assert!((combined[i] - recomposed).abs() < 1e-12);
            if (norm[0][i] - norm[1][i]).abs() < 1e-12 && (norm[1][i] - norm[2][i]).abs() < 1e-12 {
                assert!((combined[i] - norm[0][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hedge_dominant_reward() {
        let m = model();
        let g = grid();
        let state = HedgeState {
            rewards: [0.0, 0.0, 100.0],
            eta: 1.0,
            step: 3,
        };
        let s = HedgeSurface::new(&m, &state, &CFG, 0.6, &g);
        let ucb_norm = s.normalized(Acquisition::Ucb);
        for (i, &x) in g.iter().enumerate().step_by(7) {
            let v = hedge_acquisition(&m, &state, &CFG, 0.6, &g, x);
            assert!((v - ucb_norm[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn hedge_value_at_grid_matches_combined() {
        let m = model();
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = HedgeState {
            rewards: [rng.random(), rng.random(), rng.random()],
            eta: 2.0,
            step: 2,
        };
        let s = HedgeSurface::new(&m, &state, &CFG, 0.6, &g);
        let combined = s.combined();
        for (i, &x) in g.iter().enumerate() {
            assert!((s.value_at(&m, x) - combined[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn update_accumulates_posterior_means() {
        let m = model();
        let s0 = HedgeState::new(1.0);
        let noms = [0.5, 0.7, 1.0];
        let s1 = hedge_update(&s0, &m, noms);
        assert_eq!(s1.step, 1);
        let s2 = hedge_update(&s1, &m, [0.7, 0.7, 0.7]);
        let means = noms.map(|x| m.posterior(x).0);
        let m07 = m.posterior(0.7).0;
        for i in 0..3 {
            assert!((s2.rewards[i] - (means[i] + m07)).abs() < 1e-12);
        }
        assert_eq!(s2.step, 2);

        // Equal posterior means at all nominees raise each reward by that mean.
        let s3 = hedge_update(&s0, &m, [0.6; 3]);
        let mean = m.posterior(0.6).0;
        assert!(s3.rewards.iter().all(|&r| (r - mean).abs() < 1e-15));
    }

    #[test]
    fn nominees_are_grid_argmax() {
        let m = model();
        let g = grid();
        let s = HedgeSurface::new(&m, &HedgeState::new(1.0), &CFG, 0.6, &g);
        let noms = s.nominees();
        for (k, a) in Acquisition::ALL.iter().enumerate() {
            let raw = s.raw(*a);
            let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let first = raw.iter().position(|&v| v == max).unwrap();
            assert_eq!(noms[k], g[first]);
        }
    }

    proptest! {
        #[test]
        fn ei_pi_ranges_and_monotonicity(
            mean in -3.0f64..3.0, dm in 0.0f64..1.0, var in 0.0f64..4.0, best in -3.0f64..3.0
        ) {
            let ei = expected_improvement(mean, var, best, &CFG);
            let pi = probability_of_improvement(mean, var, best, &CFG);
            prop_assert!(ei >= 0.0);
            prop_assert!((0.0..=1.0).contains(&pi));
            prop_assert!(expected_improvement(mean + dm, var, best, &CFG) >= ei - 1e-15);
            prop_assert!(probability_of_improvement(mean + dm, var, best, &CFG) >= pi);
        }

        #[test]
        fn ucb_strictly_increasing(mean in -3.0f64..3.0, var in 0.0f64..4.0, d in 0.01f64..1.0) {
            prop_assert!(ucb(mean + d, var, &CFG) > ucb(mean, var, &CFG));
            prop_assert!(ucb(mean, var + d, &CFG) > ucb(mean, var, &CFG));
        }

        #[test]
        fn weights_shift_invariant(r in proptest::array::uniform3(-50.0f64..50.0), c in -100.0f64..100.0, eta in 0.01f64..3.0) {
            let a = hedge_weights(&HedgeState { rewards: r, eta, step: 0 });
            let b = hedge_weights(&HedgeState { rewards: r.map(|x| x + c), eta, step: 0 });
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..3 {
                prop_assert!((a[i] - b[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn argmax_invariant_to_affine_rescaling(scale in 0.1f64..50.0, shift in -10.0f64..10.0) {
            // Normalization makes the combined surface invariant to a*A + b for a > 0.
            let m = model();
            let g = grid();
            let state = HedgeState { rewards: [0.3, 0.1, 0.2], eta: 1.0, step: 1 };
            let s = HedgeSurface::new(&m, &state, &CFG, 0.6, &g);
            let mut scaled = s.clone();
            scaled.raw[2] = s.raw[2].iter().map(|v| scale * v + shift).collect();
            scaled.ranges[2] = (scale * s.ranges[2].0 + shift, scale * s.ranges[2].1 + shift);
            for (a, b) in s.combined().iter().zip(scaled.combined()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
