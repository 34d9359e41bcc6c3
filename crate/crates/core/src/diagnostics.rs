//! Closed-form diagnostics for pairwise merging: the second-order performance
//! band, KL / PAC-Bayes generalization terms, the per-merge contraction factor,
//! cumulative regret, and a quadratic-loss simulation of descent with merging.
//!
//! The bound functions are plain formula evaluators. Curvature and smoothness
//! constants are supplied by the caller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bayesopt::OptResult;
use crate::checkpoint::{ensure_compat, Checkpoint};
use crate::error::{Error, Result};

/// Squared Euclidean distance between two compatible checkpoints.
pub fn merge_distance(a: &Checkpoint, b: &Checkpoint) -> Result<f64> {
    ensure_compat(a, b)?;
    let mut total = 0.0f64;
    for (name, ta) in a.iter() {
        let tb = b.get(name).expect("checked by ensure_compat");
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            let d = x as f64 - y as f64;
            total += d * d;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub f_curr: f64,
    pub f_prev: f64,
    pub lambda: f64,
    /// Lipschitz constant of the performance gradient.
    pub lipschitz_grad: f64,
    pub hess_max: f64,
    pub hess_min: f64,
    /// Squared distance between the two checkpoints.
    pub dist_sq: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Domain(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.lipschitz_grad < 0.0 || self.hess_min < 0.0 || self.hess_max < 0.0 {
            return Err(Error::Domain("curvature constants must be >= 0".into()));
        }
        if self.hess_min > self.hess_max {
            return Err(Error::Domain(format!(
                "hess_min {} exceeds hess_max {}",
                self.hess_min, self.hess_max
            )));
        }
        if self.dist_sq < 0.0 {
            return Err(Error::Domain(format!("dist_sq {} must be >= 0", self.dist_sq)));
        }
        Ok(())
    }
}

/// `center ± width` with center `λ f_curr + (1-λ) f_prev` and width
/// `(λ(1-λ) L_g + ½(λ² + (1-λ)²) λ_max) · ‖Θ_t − Θ_{t-1}‖²`.
pub fn performance_bound(inp: &BoundInputs) -> Result<(f64, f64)> {
    inp.validate()?;
    let l = inp.lambda;
    let center = l * inp.f_curr + (1.0 - l) * inp.f_prev;
    let width = (l * (1.0 - l) * inp.lipschitz_grad
        + 0.5 * (l * l + (1.0 - l) * (1.0 - l)) * inp.hess_max)
        * inp.dist_sq;
    Ok((center - width, center + width))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacBayesInputs {
    pub lambda: f64,
    pub dist_sq: f64,
    /// Shared isotropic variance of the prior and posterior.
    pub sigma_sq: f64,
    pub n: u64,
    pub delta: f64,
    pub empirical_loss: f64,
}

impl PacBayesInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq > 0.0) {
            return Err(Error::Domain(format!("sigma_sq {} must be > 0", self.sigma_sq)));
        }
        if self.dist_sq < 0.0 {
            return Err(Error::Domain(format!("dist_sq {} must be >= 0", self.dist_sq)));
        }
        if self.n == 0 {
            return Err(Error::Domain("sample count n must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Domain(format!("delta {} outside (0, 1)", self.delta)));
        }
        Ok(())
    }
}

/// KL between `N(merged, σ² I)` and `N(prev, σ² I)`: `λ² ‖Θ_t − Θ_{t-1}‖² / (2σ²)`.
pub fn kl_divergence(inp: &PacBayesInputs) -> Result<f64> {
    if !(inp.sigma_sq > 0.0) {
        return Err(Error::Domain(format!("sigma_sq {} must be > 0", inp.sigma_sq)));
    }
    if inp.dist_sq < 0.0 {
        return Err(Error::Domain(format!("dist_sq {} must be >= 0", inp.dist_sq)));
    }
    Ok(inp.lambda * inp.lambda * inp.dist_sq / (2.0 * inp.sigma_sq))
}

/// McAllester-style bound: `L_S + sqrt((KL + ln(2√n/δ)) / 2n)`.
pub fn pac_bayes_bound(inp: &PacBayesInputs) -> Result<f64> {
    inp.validate()?;
    let kl = kl_divergence(inp)?;
    Ok(pac_bayes_from_kl(kl, inp.n, inp.delta, inp.empirical_loss))
}

pub(crate) fn pac_bayes_from_kl(kl: f64, n: u64, delta: f64, empirical_loss: f64) -> f64 {
    let n = n as f64;
    let complexity = kl + (2.0 * n.sqrt() / delta).ln();
    empirical_loss + (complexity / (2.0 * n)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceInputs {
    /// Learning rate.
    pub eta: f64,
    /// Polyak-Łojasiewicz constant.
    pub mu: f64,
    pub lambda: f64,
    pub hess_max: f64,
}

impl ConvergenceInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !(self.mu > 0.0) {
            return Err(Error::Domain("eta and mu must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Domain(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.hess_max < 0.0 {
            return Err(Error::Domain("hess_max must be >= 0".into()));
        }
        Ok(())
    }
}

/// Contraction factor `ρ = 1 − 2ημ(1−λ)(1 − ½η(1−λ)λ_max)`.
pub fn convergence_rate(inp: &ConvergenceInputs) -> Result<f64> {
    inp.validate()?;
    Ok(rho(inp.eta, inp.mu, inp.lambda, inp.hess_max))
}

fn rho(eta: f64, mu: f64, lambda: f64, hess_max: f64) -> f64 {
    let keep = 1.0 - lambda;
    1.0 - 2.0 * eta * mu * keep * (1.0 - 0.5 * eta * keep * hess_max)
}

/// Running sum of `f_star − f(λ_t)` over the trace.
pub fn cumulative_regret(trace: &OptResult, f_star: f64) -> Result<Vec<f64>> {
    let mut total = 0.0;
    trace
        .trace
        .iter()
        .map(|o| {
            if o.value > f_star {
                return Err(Error::Domain(format!(
                    "f_star {f_star} is below observed value {} at lambda {}",
                    o.value, o.lambda
                )));
            }
            total += f_star - o.value;
            Ok(total)
        })
        .collect()
}

/// Where the second checkpoint of each merge comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MergePartner {
    /// One further gradient step from the fresh iterate. The merge then moves
    /// `(1-λ)η∇L` beyond `θ_t`, which is the displacement the contraction
    /// factor `ρ` describes.
    #[default]
    Lookahead,
    /// The iterate before the gradient step (interpolates backwards).
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub dim: usize,
    pub eta: f64,
    pub mu: f64,
    pub hess_max: f64,
    /// Merge weight per step; the last entry is held once the schedule runs out.
    pub lambda_schedule: Vec<f64>,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub partner: MergePartner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentStep {
    pub step: usize,
    pub lambda: f64,
    /// Loss after the plain gradient step.
    pub gd_loss: f64,
    /// Loss after merging.
    pub merged_loss: f64,
    /// `merged_loss / gd_loss`, absent when the gradient step already hit the optimum.
    pub contraction: Option<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub eigenvalues: Vec<f64>,
    pub initial_loss: f64,
    pub steps: Vec<DescentStep>,
}

const DIVERGENCE_LOSS: f64 = 1e12;

/// Gradient descent on `½ θᵀHθ` (so `L* = 0`) with a pairwise merge after every
/// step. `H` is diagonal with eigenvalues spaced evenly over `[mu, hess_max]`.
pub fn simulate_merged_descent(cfg: &DescentConfig) -> Result<DescentTrace> {
    if cfg.dim == 0 || cfg.steps == 0 {
        return Err(Error::Domain("dim and steps must be >= 1".into()));
    }
    if cfg.lambda_schedule.is_empty() {
        return Err(Error::Domain("lambda schedule is empty".into()));
    }
    if !(cfg.mu > 0.0 && cfg.hess_max >= cfg.mu && cfg.eta > 0.0) {
        return Err(Error::Domain(format!(
            "need eta > 0 and 0 < mu <= hess_max, got eta {} mu {} hess_max {}",
            cfg.eta, cfg.mu, cfg.hess_max
        )));
    }
    if let Some(l) = cfg.lambda_schedule.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Domain(format!("lambda {l} outside [0, 1]")));
    }

    let eig: Vec<f64> = if cfg.dim == 1 {
        vec![cfg.mu]
    } else {
        (0..cfg.dim)
            .map(|i| cfg.mu + (cfg.hess_max - cfg.mu) * i as f64 / (cfg.dim - 1) as f64)
            .collect()
    };
    let loss = |theta: &[f64]| -> f64 {
        0.5 * theta.iter().zip(&eig).map(|(t, h)| h * t * t).sum::<f64>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    simulate_from(cfg, eig.clone(), &mut theta, loss)
}

/// Same as [`simulate_merged_descent`] but starting from a given point.
pub fn simulate_merged_descent_from(cfg: &DescentConfig, theta0: &[f64]) -> Result<DescentTrace> {
    let mut probe = cfg.clone();
    probe.dim = theta0.len();
    // Reuse validation and eigenvalues from the seeded entry point.
    let seeded = simulate_merged_descent(&DescentConfig { steps: 1, ..probe.clone() })?;
    let eig = seeded.eigenvalues;
    let loss = |theta: &[f64]| -> f64 {
        0.5 * theta.iter().zip(&eig).map(|(t, h)| h * t * t).sum::<f64>()
    };
    let mut theta = theta0.to_vec();
    simulate_from(&probe, eig.clone(), &mut theta, loss)
}

fn simulate_from<L>(cfg: &DescentConfig, eig: Vec<f64>, theta: &mut [f64], loss: L) -> Result<DescentTrace>
where
    L: Fn(&[f64]) -> f64,
{
    let initial_loss = loss(theta);
    let mut steps = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let lambda = cfg.lambda_schedule[t.min(cfg.lambda_schedule.len() - 1)];
        let before = theta.to_vec();
        for (x, h) in theta.iter_mut().zip(&eig) {
            *x -= cfg.eta * h * *x;
        }
        let gd_loss = loss(theta);
        let partner: Vec<f64> = match cfg.partner {
            MergePartner::Lookahead => theta
                .iter()
                .zip(&eig)
                .map(|(x, h)| x - cfg.eta * h * x)
                .collect(),
            MergePartner::Previous => before,
        };
        for (x, p) in theta.iter_mut().zip(&partner) {
            *x = lambda * *x + (1.0 - lambda) * p;
        }
        let merged_loss = loss(theta);
        if !merged_loss.is_finite() || merged_loss > DIVERGENCE_LOSS || gd_loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence {
                step: t + 1,
                loss: merged_loss.max(gd_loss),
            });
        }
        steps.push(DescentStep {
            step: t + 1,
            lambda,
            gd_loss,
            merged_loss,
            contraction: (gd_loss > 0.0).then(|| merged_loss / gd_loss),
            rho: rho(cfg.eta, cfg.mu, lambda, cfg.hess_max),
        });
    }
    Ok(DescentTrace {
        eigenvalues: eig,
        initial_loss,
        steps,
    })
}

/// Second directional derivative of `objective` along the merge path at
/// `lambda`, per unit squared parameter distance. A rough stand-in for the
/// curvature constants of [`BoundInputs`] on small models.
pub fn curvature_along_merge<F>(mut objective: F, lambda: f64, step: f64, dist_sq: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(step > 0.0) || !(dist_sq > 0.0) {
        return Err(Error::Domain("step and dist_sq must be > 0".into()));
    }
    let lo = (lambda - step).max(0.0);
    let hi = (lambda + step).min(1.0);
    let mid = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let second = (objective(hi)? - 2.0 * objective(mid)? + objective(lo)?) / (h * h);
    Ok(second / dist_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Tensor;
    use crate::gp::Observation;
    use rand::Rng;

    fn bound(lambda: f64, dist_sq: f64) -> BoundInputs {
        BoundInputs {
            f_curr: 1.0,
            f_prev: 0.0,
            lambda,
            lipschitz_grad: 1.0,
            hess_max: 2.0,
            hess_min: 0.0,
            dist_sq,
        }
    }

    fn pb(lambda: f64, dist_sq: f64, n: u64) -> PacBayesInputs {
        PacBayesInputs {
            lambda,
            dist_sq,
            sigma_sq: 1.0,
            n,
            delta: 0.05,
            empirical_loss: 0.0,
        }
    }

    #[test]
    fn distance_cases() {
        let a = Checkpoint::new().with_tensor("w", Tensor::from_vec(vec![0.0])).unwrap();
        let b = Checkpoint::new().with_tensor("w", Tensor::from_vec(vec![3.0])).unwrap();
        assert_eq!(merge_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(merge_distance(&a, &b).unwrap(), 9.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mk = |rng: &mut ChaCha8Rng| {
            let d: Vec<f32> = (0..50).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let e: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            Checkpoint::new()
                .with_tensor("x", Tensor::new(vec![5, 10], d).unwrap())
                .unwrap()
                .with_tensor("y", Tensor::from_vec(e))
                .unwrap()
        };
        let (p, q) = (mk(&mut rng), mk(&mut rng));
        let mut oracle = 0.0f64;
        for name in ["x", "y"] {
            let (tp, tq) = (p.get(name).unwrap().data(), q.get(name).unwrap().data());
            for i in 0..tp.len() {
                oracle += (tp[i] as f64 - tq[i] as f64).powi(2);
            }
        }
        let got = merge_distance(&p, &q).unwrap();
        assert!((got - oracle).abs() <= 1e-9 * oracle);

        let c = Checkpoint::new().with_tensor("v", Tensor::from_vec(vec![0.0])).unwrap();
        assert!(matches!(merge_distance(&a, &c), Err(Error::Compat(_))));
    }

    #[test]
    fn performance_bound_cases() {
        let (lo, hi) = performance_bound(&bound(0.3, 0.0)).unwrap();
        assert_eq!(lo, hi);
        assert!((lo - 0.3).abs() < 1e-15);

        let (lo, hi) = performance_bound(&bound(0.5, 0.01)).unwrap();
        assert!((lo - 0.4925).abs() < 1e-12);
        assert!((hi - 0.5075).abs() < 1e-12);

        let (lo, hi) = performance_bound(&bound(1.0, 0.04)).unwrap();
        assert!((0.5 * (lo + hi) - 1.0).abs() < 1e-15);
        assert!((0.5 * (hi - lo) - 0.5 * 2.0 * 0.04).abs() < 1e-15);

        let mut bad = bound(0.5, 0.01);
        bad.hess_min = 3.0;
        assert!(performance_bound(&bad).is_err());
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_divergence(&pb(0.0, 4.0, 10)).unwrap(), 0.0);
        assert_eq!(kl_divergence(&pb(1.0, 4.0, 10)).unwrap(), 2.0);
        let ratio = kl_divergence(&pb(0.5, 4.0, 10)).unwrap() / kl_divergence(&pb(1.0, 4.0, 10)).unwrap();
        assert_eq!(ratio, 0.25);
        let mut zero_sigma = pb(1.0, 4.0, 10);
        zero_sigma.sigma_sq = 0.0;
        assert!(kl_divergence(&zero_sigma).is_err());
    }

    #[test]
    fn pac_bayes_cases() {
        let v = pac_bayes_bound(&pb(0.0, 1.0, 100)).unwrap();
        assert!((v - (400f64.ln() / 200.0).sqrt()).abs() < 1e-15);
        assert!((v - 0.173_082).abs() < 1e-6);

        // Quadrupling n halves the radicand's 1/2n factor; the ln(2√n/δ) term grows by ln 2.
        let v4 = pac_bayes_bound(&pb(0.0, 1.0, 400)).unwrap();
        let expect = ((400f64.ln() + 2f64.ln()) / 800.0).sqrt();
        assert!((v4 - expect).abs() < 1e-15);
        assert!(v4 < v && v4 > 0.5 * v);

        let mut bad = pb(0.0, 1.0, 100);
        bad.delta = 1.0;
        assert!(pac_bayes_bound(&bad).is_err());
        bad.delta = 0.05;
        bad.n = 0;
        assert!(pac_bayes_bound(&bad).is_err());
    }

    #[test]
    fn rho_cases() {
        let r = |lambda, mu| {
            convergence_rate(&ConvergenceInputs {
                eta: 0.1,
                mu,
                lambda,
                hess_max: 1.0,
            })
            .unwrap()
        };
        assert_eq!(r(1.0, 1.0), 1.0);
        assert!((r(0.9, 1.0) - 0.9801).abs() < 1e-9);
        assert!(r(0.5, 2.0) < r(0.5, 1.0));
    }

    #[test]
    fn regret_cases() {
        let trace = OptResult::from_trace([1.0, 2.0, 3.0].map(|v| Observation::new(0.5, v)));
        assert_eq!(cumulative_regret(&trace, 3.0).unwrap(), vec![2.0, 3.0, 3.0]);
        let flat = OptResult::from_trace([3.0; 4].map(|v| Observation::new(0.5, v)));
        assert_eq!(cumulative_regret(&flat, 3.0).unwrap(), vec![0.0; 4]);
        assert!(matches!(cumulative_regret(&trace, 2.5), Err(Error::Domain(_))));
    }

    fn descent(lambda: f64, partner: MergePartner) -> DescentConfig {
        DescentConfig {
            dim: 1,
            eta: 0.1,
            mu: 1.0,
            hess_max: 1.0,
            lambda_schedule: vec![lambda],
            steps: 20,
            seed: 3,
            partner,
        }
    }

    #[test]
    fn no_merge_is_plain_descent() {
        let t = simulate_merged_descent(&DescentConfig {
            dim: 4,
            hess_max: 3.0,
            ..descent(1.0, MergePartner::Lookahead)
        })
        .unwrap();
        let mut prev = t.initial_loss;
        for s in &t.steps {
            assert_eq!(s.gd_loss, s.merged_loss);
            assert!(s.gd_loss < prev);
            prev = s.merged_loss;
        }
    }

    #[test]
    fn one_dim_contraction_matches_rho() {
        // In 1-D with mu = hess_max = h the lookahead merge multiplies θ by
        // 1 − (1−λ)ηh, so the loss ratio is (1 − (1−λ)ηh)² = ρ exactly.
        for lambda in [0.5, 0.7, 0.9] {
            let t = simulate_merged_descent(&descent(lambda, MergePartner::Lookahead)).unwrap();
            for s in &t.steps {
                assert!((s.contraction.unwrap() - s.rho).abs() < 1e-12);
                assert!(s.merged_loss <= s.gd_loss);
            }
        }
    }

    #[test]
    fn previous_partner_interpolates_backwards() {
        let t = simulate_merged_descent(&descent(0.5, MergePartner::Previous)).unwrap();
        assert!(t.steps.iter().all(|s| s.contraction.unwrap() > 1.0));
    }

    #[test]
    fn multi_dim_contraction_bounded_by_rho() {
        let cfg = DescentConfig {
            dim: 8,
            eta: 0.2,
            mu: 0.5,
            hess_max: 4.0,
            lambda_schedule: vec![0.6, 0.8, 0.9, 0.5],
            steps: 30,
            seed: 9,
            partner: MergePartner::Lookahead,
        };
        let t = simulate_merged_descent(&cfg).unwrap();
        for s in &t.steps {
            assert!(s.contraction.unwrap() <= s.rho + 1e-12);
        }
    }

    #[test]
    fn optimum_is_fixed_point() {
        let t = simulate_merged_descent_from(&descent(0.7, MergePartner::Lookahead), &[0.0]).unwrap();
        assert!(t.steps.iter().all(|s| s.gd_loss == 0.0 && s.merged_loss == 0.0));
        assert!(t.steps.iter().all(|s| s.contraction.is_none()));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = DescentConfig {
            eta: 5.0,
            steps: 200,
            ..descent(1.0, MergePartner::Lookahead)
        };
        assert!(matches!(
            simulate_merged_descent(&cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn curvature_of_quadratic_path() {
        // objective(λ) = -3 λ² over a path of squared length 2 → -6 / 2.
        let c = curvature_along_merge(|l| Ok(-3.0 * l * l), 0.5, 0.01, 2.0).unwrap();
        assert!((c + 3.0).abs() < 1e-6);
    }

    proptest::proptest! {
        #[test]
        fn bound_band_is_ordered(l in 0.0f64..=1.0, d in 0.0f64..1.0, lg in 0.0f64..5.0, hm in 0.0f64..5.0) {
            let (lo, hi) = performance_bound(&BoundInputs {
                f_curr: 0.7, f_prev: 0.4, lambda: l, lipschitz_grad: lg, hess_max: hm, hess_min: 0.0, dist_sq: d,
            }).unwrap();
            let center = l * 0.7 + (1.0 - l) * 0.4;
            proptest::prop_assert!(lo <= center + 1e-15 && center <= hi + 1e-15);
        }

        #[test]
        fn kl_never_exceeds_full_step(l in 0.0f64..=1.0, d in 0.0f64..10.0) {
            proptest::prop_assert!(kl_divergence(&pb(l, d, 1)).unwrap() <= kl_divergence(&pb(1.0, d, 1)).unwrap());
        }

        #[test]
        fn pac_bayes_monotone(kl1 in 0.0f64..10.0, dk in 0.0f64..10.0, d1 in 0.01f64..0.5) {
            let a = pac_bayes_from_kl(kl1, 100, d1, 0.1);
            proptest::prop_assert!(pac_bayes_from_kl(kl1 + dk, 100, d1, 0.1) >= a);
            proptest::prop_assert!(pac_bayes_from_kl(kl1, 100, d1 * 0.5, 0.1) >= a);
        }

        #[test]
        fn regret_non_decreasing(vals in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
            let trace = OptResult::from_trace(vals.iter().map(|&v| Observation::new(0.5, v)));
            let r = cumulative_regret(&trace, 5.0).unwrap();
            proptest::prop_assert!(r.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
