//! One-dimensional Gaussian-process regression with a squared-exponential kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Diagonal jitter tried, in order, when the Gram matrix will not factor.
pub const JITTER_LADDER: [f64; 7] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5];
const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Signal variance.
    pub variance: f64,
    pub length_scale: f64,
    /// Observation noise variance added to the Gram diagonal.
    pub noise: f64,
}

impl KernelParams {
    pub fn new(variance: f64, length_scale: f64, noise: f64) -> Result<Self> {
        let p = Self {
            variance,
            length_scale,
            noise,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::Domain(format!("kernel variance {} must be > 0", self.variance)));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::Domain(format!(
                "length scale {} must be > 0",
                self.length_scale
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Domain(format!("noise {} must be >= 0", self.noise)));
        }
        Ok(())
    }
}

pub fn kernel_eval(params: &KernelParams, x: f64, y: f64) -> f64 {
    let d = x - y;
    params.variance * (-d * d / (2.0 * params.length_scale * params.length_scale)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub lambda: f64,
    pub value: f64,
}

impl Observation {
    pub fn new(lambda: f64, value: f64) -> Self {
        Self { lambda, value }
    }
}

/// A fitted posterior. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    params: KernelParams,
    obs: Vec<Observation>,
    prior_mean: f64,
    /// Lower factor of `K + (noise + jitter) I`, row-major.
    chol: Vec<f64>,
    /// `(K + noise I)^{-1} (f - mu_0)`.
    alpha: Vec<f64>,
    jitter: f64,
}

pub fn gp_fit(obs: &[Observation], params: KernelParams, prior_mean: f64) -> Result<GpModel> {
    params.validate()?;
    if obs.is_empty() {
        return Err(Error::EmptyInput("gaussian process fit needs observations"));
    }
    if let Some(o) = obs.iter().find(|o| !o.lambda.is_finite() || !o.value.is_finite()) {
        return Err(Error::Numerical(format!("non-finite observation {o:?}")));
    }
    if params.noise == 0.0 {
        for (i, a) in obs.iter().enumerate() {
            if obs[..i].iter().any(|b| b.lambda == a.lambda) {
                return Err(Error::Duplicate(a.lambda));
            }
        }
    }

    let n = obs.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = kernel_eval(&params, obs[i].lambda, obs[j].lambda);
        }
        gram[i * n + i] += params.noise;
    }

    let mut factored = None;
    let ladder = JITTER_LADDER.iter().copied().chain(std::iter::once(MAX_JITTER));
    for jitter in ladder {
        let mut a = gram.clone();
        for i in 0..n {
            a[i * n + i] += jitter;
        }
        if let Some(l) = linalg::cholesky(&a, n) {
            factored = Some((l, jitter));
            break;
        }
    }
    let (chol, jitter) = factored.ok_or_else(|| {
        Error::Numerical(format!(
            "gram matrix of {n} observations not positive definite with jitter {MAX_JITTER}"
        ))
    })?;

    let resid: Vec<f64> = obs.iter().map(|o| o.value - prior_mean).collect();
    let alpha = linalg::solve_upper_t(&chol, n, &linalg::solve_lower(&chol, n, &resid));
    Ok(GpModel {
        params,
        obs: obs.to_vec(),
        prior_mean,
        chol,
        alpha,
        jitter,
    })
}

impl GpModel {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    /// Jitter that was added to the diagonal to obtain a factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn cholesky_factor(&self) -> &[f64] {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    fn cross_cov(&self, x: f64) -> Vec<f64> {
        self.obs
            .iter()
            .map(|o| kernel_eval(&self.params, x, o.lambda))
            .collect()
    }

    /// Posterior mean and variance before the variance is clamped at zero.
    pub fn posterior_raw(&self, x: f64) -> (f64, f64) {
        let k = self.cross_cov(x);
        let mean = self.prior_mean + linalg::dot(&k, &self.alpha);
        let v = linalg::solve_lower(&self.chol, self.obs.len(), &k);
        let var = kernel_eval(&self.params, x, x) - linalg::dot(&v, &v);
        (mean, var)
    }

    pub fn posterior(&self, x: f64) -> (f64, f64) {
        let (mean, var) = self.posterior_raw(x);
        (mean, var.max(0.0))
    }

    /// Log marginal likelihood of the observations under this model.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.obs.len();
        let resid: Vec<f64> = self.obs.iter().map(|o| o.value - self.prior_mean).collect();
        let log_det: f64 = (0..n).map(|i| self.chol[i * n + i].ln()).sum::<f64>() * 2.0;
        -0.5 * linalg::dot(&resid, &self.alpha)
            - 0.5 * log_det
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

pub fn gp_posterior(model: &GpModel, x: f64) -> (f64, f64) {
    model.posterior(x)
}

/// How kernel hyperparameters are chosen from the data at each refit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelPolicy {
    /// Fixed signal variance; `None` uses the sample variance of observed values.
    pub variance: Option<f64>,
    /// Length scale as a fraction of the search-interval width.
    pub length_scale_factor: f64,
    pub noise: f64,
    /// Pick the length-scale factor from `REFINE_FACTORS` by marginal likelihood.
    pub refine_length_scale: bool,
}

pub const REFINE_FACTORS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];

impl Default for KernelPolicy {
    fn default() -> Self {
        Self {
            variance: None,
            length_scale_factor: 0.2,
            noise: 1e-6,
            refine_length_scale: false,
        }
    }
}

impl KernelPolicy {
    /// Fits a model to `obs` over an interval of width `width`, prior mean = sample mean.
    pub fn fit(&self, obs: &[Observation], width: f64) -> Result<GpModel> {
        self.fit_with_noise(obs, width, self.noise)
    }

    pub(crate) fn fit_with_noise(
        &self,
        obs: &[Observation],
        width: f64,
        noise: f64,
    ) -> Result<GpModel> {
        if obs.is_empty() {
            return Err(Error::EmptyInput("gaussian process fit needs observations"));
        }
        let n = obs.len() as f64;
        let mean = obs.iter().map(|o| o.value).sum::<f64>() / n;
        let variance = match self.variance {
            Some(v) => v,
            None => sample_variance(obs, mean),
        };
        let make = |factor: f64| KernelParams::new(variance, factor * width, noise);
        if !self.refine_length_scale {
            return gp_fit(obs, make(self.length_scale_factor)?, mean);
        }
        let mut best: Option<(f64, GpModel)> = None;
        for factor in REFINE_FACTORS {
            let model = gp_fit(obs, make(factor)?, mean)?;
            let lml = model.log_marginal_likelihood();
            // strict > keeps the smallest factor on ties
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, model));
            }
        }
        Ok(best.expect("refine grid is non-empty").1)
    }
}

/// Unbiased sample variance, falling back to 1 when the values carry no spread.
fn sample_variance(obs: &[Observation], mean: f64) -> f64 {
    if obs.len() < 2 {
        return 1.0;
    }
    let ss: f64 = obs.iter().map(|o| (o.value - mean).powi(2)).sum();
    let v = ss / (obs.len() - 1) as f64;
    if v > 1e-12 {
        v
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> KernelParams {
        KernelParams::new(1.0, 1.0, 0.0).unwrap()
    }

    /// Posterior via an explicitly inverted Gram matrix.
    fn dense_inverse_posterior(
        obs: &[Observation],
        p: &KernelParams,
        mu0: f64,
        x: f64,
    ) -> (f64, f64) {
        let n = obs.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            kernel_eval(p, obs[i].lambda, obs[j].lambda) + if i == j { p.noise } else { 0.0 }
        });
        let kinv = k.try_inverse().unwrap();
        let kx = DVector::from_fn(n, |i, _| kernel_eval(p, x, obs[i].lambda));
        let f = DVector::from_fn(n, |i, _| obs[i].value - mu0);
        let mean = mu0 + (kx.transpose() * &kinv * f)[0];
        let var = kernel_eval(p, x, x) - (kx.transpose() * &kinv * &kx)[0];
        (mean, var)
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_eval(&unit(), 0.3, 0.3), 1.0);
        assert!((kernel_eval(&unit(), 0.0, 1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((kernel_eval(&unit(), 0.0, 1.0) - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn single_observation_interpolates() {
        let m = gp_fit(&[Observation::new(0.5, 2.0)], unit(), 0.0).unwrap();
        let (mean, var) = m.posterior(0.5);
        assert!((mean - 2.0).abs() < 1e-12);
        assert!(var.abs() < 1e-12);
    }

    #[test]
    fn duplicate_lambda_without_noise() {
        let obs = [Observation::new(0.5, 1.0), Observation::new(0.5, 1.2)];
        assert!(matches!(gp_fit(&obs, unit(), 0.0), Err(Error::Duplicate(_))));
        let noisy = KernelParams::new(1.0, 1.0, 1e-3).unwrap();
        assert!(gp_fit(&obs, noisy, 0.0).is_ok());
    }

    #[test]
    fn empty_and_invalid() {
        assert!(matches!(gp_fit(&[], unit(), 0.0), Err(Error::EmptyInput(_))));
        assert!(KernelParams::new(0.0, 1.0, 0.0).is_err());
        assert!(KernelParams::new(1.0, -1.0, 0.0).is_err());
        assert!(KernelParams::new(1.0, 1.0, -1e-3).is_err());
    }

    #[test]
    fn matches_dense_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = KernelParams::new(1.3, 0.15, 1e-6).unwrap();
        let obs: Vec<_> = (0..10)
            .map(|i| Observation::new(i as f64 / 9.0 + rng.random_range(-0.02..0.02), rng.random()))
            .collect();
        let m = gp_fit(&obs, p, 0.4).unwrap();
        for _ in 0..50 {
            let x = rng.random_range(-0.2..1.2);
            let (mean, var) = m.posterior_raw(x);
            let (om, ov) = dense_inverse_posterior(&obs, &p, 0.4, x);
            assert!((mean - om).abs() < 1e-6, "mean {mean} vs {om}");
            assert!((var - ov).abs() < 1e-6, "var {var} vs {ov}");
        }
    }

    #[test]
    fn two_point_closed_form() {
        // obs (0.5, 1), (1, 2); variance 1, l = 0.5, zero noise, zero prior mean.
        let p = KernelParams::new(1.0, 0.5, 0.0).unwrap();
        let obs = [Observation::new(0.5, 1.0), Observation::new(1.0, 2.0)];
        let m = gp_fit(&obs, p, 0.0).unwrap();
        let c = (-0.25f64 / (2.0 * 0.25)).exp(); // k(0.5, 1.0)
        let kx = (-0.0625f64 / 0.5).exp(); // k(0.75, 0.5) = k(0.75, 1.0)
        let det = 1.0 - c * c;
        // K^{-1} = [[1, -c], [-c, 1]] / det
        let w = [(1.0 - c) * kx / det, (1.0 - c) * kx / det];
        let mean = w[0] * 1.0 + w[1] * 2.0;
        let var = 1.0 - (kx * w[0] + kx * w[1]);
        let (gm, gv) = m.posterior(0.75);
        assert!((gm - mean).abs() < 1e-12);
        assert!((gv - var).abs() < 1e-12);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let p = KernelParams::new(2.0, 0.1, 0.0).unwrap();
        let obs = [Observation::new(0.5, 1.0), Observation::new(0.7, 3.0)];
        let m = gp_fit(&obs, p, 0.25).unwrap();
        let (mean, var) = m.posterior(50.0);
        assert!((mean - 0.25).abs() < 1e-6);
        assert!((var - 2.0).abs() < 1e-6);
    }

    #[test]
    fn cholesky_reproduces_gram() {
        let p = KernelParams::new(0.7, 0.2, 1e-6).unwrap();
        let obs: Vec<_> = (0..8).map(|i| Observation::new(0.5 + 0.06 * i as f64, i as f64)).collect();
        let m = gp_fit(&obs, p, 0.0).unwrap();
        let n = obs.len();
        let l = m.cholesky_factor();
        for i in 0..n {
            for j in 0..n {
                let llt: f64 = (0..n).map(|k| l[i * n + k] * l[j * n + k]).sum();
                let mut want = kernel_eval(&p, obs[i].lambda, obs[j].lambda);
                if i == j {
                    want += p.noise + m.jitter();
                }
                assert!((llt - want).abs() <= 1e-8 * want.abs().max(1.0));
            }
        }
        assert_eq!(m.alpha().len(), n);
    }

    #[test]
    fn near_duplicates_use_jitter() {
        let p = KernelParams::new(1.0, 0.5, 0.0).unwrap();
        let obs = [
            Observation::new(0.5, 1.0),
            Observation::new(0.5 + 1e-13, 1.0),
            Observation::new(0.5 + 2e-13, 1.0),
        ];
        let m = gp_fit(&obs, p, 0.0).unwrap();
        assert!(m.jitter() > 0.0);
    }

    #[test]
    fn refinement_picks_from_grid() {
        let obs: Vec<_> = (0..8)
            .map(|i| {
                let x = 0.5 + i as f64 / 14.0;
                Observation::new(x, (20.0 * x).sin())
            })
            .collect();
        let policy = KernelPolicy {
            refine_length_scale: true,
            ..Default::default()
        };
        let m = policy.fit(&obs, 0.5).unwrap();
        let factor = m.params().length_scale / 0.5;
        assert!(REFINE_FACTORS.iter().any(|f| (f - factor).abs() < 1e-12));
    }

    proptest::proptest! {
        #[test]
        fn kernel_is_symmetric(a in -2.0f64..2.0, b in -2.0f64..2.0, l in 0.01f64..3.0) {
            let p = KernelParams::new(1.7, l, 0.0).unwrap();
            proptest::prop_assert_eq!(kernel_eval(&p, a, b), kernel_eval(&p, b, a));
        }

        #[test]
        fn interpolates_and_variance_nonnegative(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = KernelParams::new(1.0, 0.3, 0.0).unwrap();
            let obs: Vec<_> = (0..6)
                .map(|i| Observation::new(i as f64 / 5.0, rng.random_range(-1.0..1.0)))
                .collect();
            let m = gp_fit(&obs, p, 0.1).unwrap();
            for o in &obs {
                let (mean, var) = m.posterior_raw(o.lambda);
                proptest::prop_assert!((mean - o.value).abs() < 1e-8);
                proptest::prop_assert!(var.abs() < 1e-8);
            }
            for _ in 0..20 {
                let (_, var) = m.posterior_raw(rng.random_range(-0.5..1.5));
                proptest::prop_assert!(var >= -1e-8);
            }
        }

        #[test]
        fn adding_observation_never_raises_variance(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = KernelParams::new(1.0, 0.2, 1e-6).unwrap();
            let mut obs: Vec<_> = (0..4)
                .map(|i| Observation::new(0.1 + 0.25 * i as f64, rng.random()))
                .collect();
            let before = gp_fit(&obs, p, 0.0).unwrap();
            obs.push(Observation::new(rng.random(), rng.random()));
            let after = gp_fit(&obs, p, 0.0).unwrap();
            for i in 0..50 {
                let x = i as f64 / 49.0;
                proptest::prop_assert!(after.posterior(x).1 <= before.posterior(x).1 + 1e-9);
            }
        }
    }
}
