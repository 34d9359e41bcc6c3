use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky;

/// Points of the fixed grid a `gp-sample` function is drawn on.
pub const GP_SAMPLE_POINTS: usize = 201;
pub const GP_SAMPLE_LENGTH_SCALE: f64 = 0.1;
/// Diagonal jitter added to the sample covariance before factoring.
pub const GP_SAMPLE_JITTER: f64 = 1e-8;

/// Parameters of a synthetic 1-D objective on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// `-(λ - peak)²`
    QuadraticPeak { peak: f64 },
    /// Two Gaussian bumps; the taller one is the global maximum.
    TwoBump {
        center_a: f64,
        height_a: f64,
        center_b: f64,
        height_b: f64,
        width: f64,
    },
    /// Zero on `[lo, hi]`, falling off linearly outside it.
    Plateau { lo: f64, hi: f64 },
    /// A single draw from a zero-mean, unit-variance GP prior.
    GpSample { seed: u64 },
}

/// A synthetic objective. `gp-sample` functions are drawn once at construction
/// and shared between clones.
#[derive(Debug, Clone)]
pub struct SyntheticObjective {
    kind: SyntheticKind,
    samples: Option<Arc<Vec<f64>>>,
}

impl PartialEq for SyntheticObjective {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl SyntheticObjective {
    pub fn new(kind: SyntheticKind) -> Result<Self> {
        let samples = match kind {
            SyntheticKind::GpSample { seed } => Some(Arc::new(draw_gp_sample(seed)?)),
            SyntheticKind::QuadraticPeak { peak } => {
                check_unit("peak", peak)?;
                None
            }
            SyntheticKind::TwoBump { center_a, center_b, width, .. } => {
                check_unit("center_a", center_a)?;
                check_unit("center_b", center_b)?;
                if !(width > 0.0) {
                    return Err(Error::Domain(format!("bump width {width} must be > 0")));
                }
                None
            }
            SyntheticKind::Plateau { lo, hi } => {
                if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
                    return Err(Error::Domain(format!("plateau [{lo}, {hi}] not inside [0, 1]")));
                }
                None
            }
        };
        Ok(Self { kind, samples })
    }

    pub fn quadratic_peak(peak: f64) -> Result<Self> {
        Self::new(SyntheticKind::QuadraticPeak { peak })
    }

    pub fn gp_sample(seed: u64) -> Result<Self> {
        Self::new(SyntheticKind::GpSample { seed })
    }

    pub fn kind(&self) -> SyntheticKind {
        self.kind
    }

    /// Grid values of a `gp-sample` objective.
    pub fn sample_values(&self) -> Option<&[f64]> {
        self.samples.as_deref().map(Vec::as_slice)
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        eval_synthetic(self, lambda)
    }

    /// Maximum over a uniform grid on `[lo, hi]`, returned as `(argmax, max)`.
    pub fn dense_max(&self, lo: f64, hi: f64, points: usize) -> (f64, f64) {
        let mut best = (lo, f64::NEG_INFINITY);
        for i in 0..points {
            let t = i as f64 / (points - 1) as f64;
            let x = (1.0 - t) * lo + t * hi;
            let v = self.eval(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        best
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("{name} {v} outside [0, 1]")));
    }
    Ok(())
}

pub fn eval_synthetic(obj: &SyntheticObjective, lambda: f64) -> f64 {
    let x = lambda.clamp(0.0, 1.0);
    match obj.kind {
        SyntheticKind::QuadraticPeak { peak } => -(x - peak) * (x - peak),
        SyntheticKind::TwoBump {
            center_a,
            height_a,
            center_b,
            height_b,
            width,
        } => {
            let bump = |c: f64| (-(x - c) * (x - c) / (2.0 * width * width)).exp();
            height_a * bump(center_a) + height_b * bump(center_b)
        }
        SyntheticKind::Plateau { lo, hi } => -(lo - x).max(x - hi).max(0.0),
        SyntheticKind::GpSample { .. } => {
            let v = obj.samples.as_ref().expect("drawn at construction");
            let pos = x * (GP_SAMPLE_POINTS - 1) as f64;
            let i = (pos.floor() as usize).min(GP_SAMPLE_POINTS - 2);
            let frac = pos - i as f64;
            (1.0 - frac) * v[i] + frac * v[i + 1]
        }
    }
}

fn draw_gp_sample(seed: u64) -> Result<Vec<f64>> {
    let n = GP_SAMPLE_POINTS;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = xs[i] - xs[j];
            k[i * n + j] = (-0.5 * d * d / (GP_SAMPLE_LENGTH_SCALE * GP_SAMPLE_LENGTH_SCALE)).exp();
        }
        k[i * n + i] += GP_SAMPLE_JITTER;
    }
    let l = cholesky(&k, n)
        .ok_or_else(|| Error::Numerical("gp-sample covariance is not positive definite".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok((0..n)
        .map(|i| (0..=i).map(|j| l[i * n + j] * z[j]).sum())
        .collect())
}

impl fmt::Display for SyntheticObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SyntheticKind::QuadraticPeak { peak } => write!(f, "quadratic-peak:{peak}"),
            SyntheticKind::TwoBump {
                center_a,
                height_a,
                center_b,
                height_b,
                width,
            } => write!(f, "two-bump:{center_a},{height_a},{center_b},{height_b},{width}"),
            SyntheticKind::Plateau { lo, hi } => write!(f, "plateau:{lo},{hi}"),
            SyntheticKind::GpSample { seed } => write!(f, "gp-sample:{seed}"),
        }
    }
}

/// Parses `quadratic-peak[:p]`, `two-bump[:ca,ha,cb,hb,w]`, `plateau[:lo,hi]`
/// and `gp-sample[:seed]`.
impl FromStr for SyntheticObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Domain(format!("bad number `{a}` in `{s}`")))
                })
                .collect::<Result<_>>()?
        };
        let arity = |n: usize| -> Result<()> {
            if nums.is_empty() || nums.len() == n {
                Ok(())
            } else {
                Err(Error::Domain(format!("`{name}` takes {n} parameters, got {}", nums.len())))
            }
        };
        let kind = match name {
            "quadratic-peak" => {
                arity(1)?;
                SyntheticKind::QuadraticPeak {
                    peak: nums.first().copied().unwrap_or(0.9),
                }
            }
            "two-bump" => {
                arity(5)?;
                let p = if nums.is_empty() { vec![0.6, 0.7, 0.9, 1.0, 0.05] } else { nums.clone() };
                SyntheticKind::TwoBump {
                    center_a: p[0],
                    height_a: p[1],
                    center_b: p[2],
                    height_b: p[3],
                    width: p[4],
                }
            }
            "plateau" => {
                arity(2)?;
                let p = if nums.is_empty() { vec![0.7, 0.85] } else { nums.clone() };
                SyntheticKind::Plateau { lo: p[0], hi: p[1] }
            }
            "gp-sample" => {
                arity(1)?;
                let seed = nums.first().copied().unwrap_or(0.0);
                if seed < 0.0 || seed.fract() != 0.0 {
                    return Err(Error::Domain(format!("gp-sample seed `{seed}` must be a non-negative integer")));
                }
                SyntheticKind::GpSample { seed: seed as u64 }
            }
            _ => return Err(Error::Domain(format!("unknown synthetic objective `{name}`"))),
        };
        Self::new(kind)
    }
}
