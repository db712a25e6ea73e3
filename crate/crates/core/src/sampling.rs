//! Random observation times on `[0, T]`.
//!
//! Durations between consecutive observations are i.i.d. draws from a
//! scale family with mean `Δ_n`, so the dispersion constant
//! `M = Var(τ) / Δ_n²` does not depend on the sampling rate.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationLaw {
    Deterministic,
    Exponential,
    /// Gamma durations with the given shape; the scale follows from the mean.
    Gamma { shape: f64 },
    /// Durations uniform on `[Δ(1-h), Δ(1+h)]`.
    Uniform { half_width_frac: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub law: DurationLaw,
    pub mean_duration: f64,
}

impl SamplingScheme {
    pub fn new(law: DurationLaw, mean_duration: f64) -> Result<Self> {
        let scheme = SamplingScheme { law, mean_duration };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn deterministic(mean_duration: f64) -> Result<Self> {
        Self::new(DurationLaw::Deterministic, mean_duration)
    }

    pub fn exponential(mean_duration: f64) -> Result<Self> {
        Self::new(DurationLaw::Exponential, mean_duration)
    }

    pub fn gamma(shape: f64, mean_duration: f64) -> Result<Self> {
        Self::new(DurationLaw::Gamma { shape }, mean_duration)
    }

    pub fn uniform(half_width_frac: f64, mean_duration: f64) -> Result<Self> {
        Self::new(DurationLaw::Uniform { half_width_frac }, mean_duration)
    }

    /// Same law, different mean duration.
    pub fn with_mean(self, mean_duration: f64) -> Result<Self> {
        Self::new(self.law, mean_duration)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_duration.is_finite() && self.mean_duration > 0.0) {
            return Err(Error::param(format!(
                "mean duration must be positive and finite, got {}",
                self.mean_duration
            )));
        }
        match self.law {
            DurationLaw::Gamma { shape } if !(shape.is_finite() && shape > 0.0) => Err(
                Error::param(format!("gamma shape must be positive, got {shape}")),
            ),
            DurationLaw::Uniform { half_width_frac: h } if !(0.0..1.0).contains(&h) => Err(
                Error::param(format!("uniform half-width fraction must lie in [0, 1), got {h}")),
            ),
            _ => Ok(()),
        }
    }

    /// `Var(τ) / Δ_n²` in closed form.
    pub fn analytic_m(&self) -> f64 {
        match self.law {
            DurationLaw::Deterministic => 0.0,
            DurationLaw::Exponential => 1.0,
            DurationLaw::Gamma { shape } => 1.0 / shape,
            DurationLaw::Uniform { half_width_frac: h } => h * h / 3.0,
        }
    }

    fn sampler(&self) -> Result<DurationSampler> {
        let mean = self.mean_duration;
        Ok(match self.law {
            DurationLaw::Deterministic => DurationSampler::Constant(mean),
            DurationLaw::Exponential => DurationSampler::Exp(
                Exp::new(1.0 / mean).map_err(|e| Error::param(e.to_string()))?,
            ),
            DurationLaw::Gamma { shape } => DurationSampler::Gamma(
                Gamma::new(shape, mean / shape).map_err(|e| Error::param(e.to_string()))?,
            ),
            DurationLaw::Uniform { half_width_frac: h } if h == 0.0 => {
                DurationSampler::Constant(mean)
            }
            DurationLaw::Uniform { half_width_frac: h } => {
                DurationSampler::Uniform(Uniform::new_inclusive(mean * (1.0 - h), mean * (1.0 + h)))
            }
        })
    }
}

enum DurationSampler {
    Constant(f64),
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
    Uniform(Uniform<f64>),
}

impl DurationSampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DurationSampler::Constant(c) => *c,
            DurationSampler::Exp(d) => d.sample(rng),
            DurationSampler::Gamma(d) => d.sample(rng),
            DurationSampler::Uniform(d) => d.sample(rng),
        }
    }
}

/// Realized observation times `0 = t_0 < t_1 < ... < t_N <= T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    times: Vec<f64>,
    durations: Vec<f64>,
    horizon: f64,
}

impl SampleGrid {
    /// Builds a grid from observation times, checking that they start at
    /// zero, increase strictly and stay within the horizon.
    pub fn from_times(times: Vec<f64>, horizon: f64) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::data("sampling times must start at t_0 = 0"));
        }
        if let Some(&last) = times.last() {
            if last > horizon {
                return Err(Error::data(format!(
                    "last sampling time {last} exceeds horizon {horizon}"
                )));
            }
        }
        let durations: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(i) = durations.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::data(format!(
                "sampling times must be strictly increasing (index {})",
                i + 1
            )));
        }
        Ok(SampleGrid {
            times,
            durations,
            horizon,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of observations after `t_0`, i.e. `N_T^n`.
    pub fn count(&self) -> usize {
        self.durations.len()
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("grid always holds t_0")
    }
}

/// Draws observation times up to `horizon`.
///
/// The duration that would cross the horizon is discarded, so the grid
/// holds exactly the times `t_i <= T`.
pub fn gen_sampling_times(scheme: &SamplingScheme, horizon: f64, seed: u64) -> Result<SampleGrid> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::param(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    scheme.validate()?;

    let expected = (horizon / scheme.mean_duration).ceil() as usize + 1;
    let mut times = Vec::with_capacity(expected + expected / 8 + 16);
    times.push(0.0);

    if let DurationLaw::Deterministic = scheme.law {
        // i * Δ rather than a running sum, so T/Δ points land on T exactly.
        let count = (horizon / scheme.mean_duration * (1.0 + 1e-12)).floor() as usize;
        times.extend((1..=count).map(|i| (i as f64 * scheme.mean_duration).min(horizon)));
    } else {
        let sampler = scheme.sampler()?;
        let mut rng = rng_from_seed(seed);
        let mut t = 0.0;
        loop {
            let next = t + sampler.draw(&mut rng);
            if next > horizon {
                break;
            }
            // Durations far below f64 resolution at t would collapse the grid.
            if next > t {
                times.push(next);
            }
            t = next;
        }
    }

    Ok(SampleGrid {
        durations: times.windows(2).map(|w| w[1] - w[0]).collect(),
        times,
        horizon,
    })
}

/// Sample mean duration and `M̂ = s² / Δ̂²` with the unbiased variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DurationStats {
    pub mean_duration: f64,
    pub m_hat: f64,
}

impl DurationStats {
    pub fn from_durations(durations: &[f64]) -> Result<Self> {
        let n = durations.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 durations to estimate their variance, got {n}"
            )));
        }
        let mean = durations.iter().sum::<f64>() / n as f64;
        let var = durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(DurationStats {
            mean_duration: mean,
            m_hat: var / (mean * mean),
        })
    }
}

pub fn estimate_duration_stats(grid: &SampleGrid) -> Result<DurationStats> {
    DurationStats::from_durations(grid.durations())
}

/// Empirical counterparts of the even-spacing conditions on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regularity {
    /// `n · Σ τ_i²`, bounded when the squared durations sum to `O(1/n)`.
    pub sum_sq_scaled: f64,
    /// `N / n`, bounded when the count is `O(n)`.
    pub count_ratio: f64,
}

pub fn check_regularity(durations: &[f64], n: f64) -> Regularity {
    if durations.is_empty() {
        return Regularity {
            sum_sq_scaled: 0.0,
            count_ratio: 0.0,
        };
    }
    Regularity {
        sum_sq_scaled: n * durations.iter().map(|d| d * d).sum::<f64>(),
        count_ratio: durations.len() as f64 / n,
    }
}
