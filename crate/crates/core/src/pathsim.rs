//! Joint simulation of the log price and its spot variance.
//!
//! The observation grid is an input: it is drawn first from its own seed
//! stream, and the Brownian drivers used here never see that stream.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::sampling::SampleGrid;
use crate::seed::rng_from_seed;

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Drift {
    Constant(f64),
    /// `b(t)` with an almost-sure bound `|b(t)| <= bound`, checked on every step.
    TimeVarying { func: TimeFn, bound: f64 },
}

#[derive(Clone)]
pub enum VolModel {
    Constant { sigma: f64 },
    /// Deterministic spot variance `σ²(t) = a + b·t`.
    Linear { a: f64, b: f64 },
    /// Arbitrary deterministic spot variance, bounded by `bound`.
    Deterministic { variance: TimeFn, bound: f64 },
    /// Square-root variance `dv = κ(θ - v)dt + ξ√v dB`.
    Cir {
        kappa: f64,
        theta: f64,
        xi: f64,
        v0: f64,
        /// Accept parameters violating `2κθ >= ξ²`; the scheme then relies on
        /// full truncation at zero.
        allow_feller_violation: bool,
    },
    /// `d ln σ = κ(θ - ln σ)dt + ξ dB`, stepped exactly in log scale.
    LogOu {
        kappa: f64,
        theta: f64,
        xi: f64,
        sigma0: f64,
    },
}

/// Compound-Poisson multiplicative jumps of the spot variance:
/// at rate `intensity`, `σ² ← σ² · exp(J)` with `J ~ N(log_mean, log_sd²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolJumps {
    pub intensity: f64,
    pub log_mean: f64,
    pub log_sd: f64,
}

#[derive(Clone)]
pub struct ModelSpec {
    pub x0: f64,
    pub drift: Drift,
    pub vol: VolModel,
    /// Correlation between the price and the variance drivers.
    pub leverage: f64,
    pub vol_jumps: Option<VolJumps>,
}

impl ModelSpec {
    pub fn constant(sigma: f64) -> Self {
        ModelSpec {
            x0: 0.0,
            drift: Drift::Constant(0.0),
            vol: VolModel::Constant { sigma },
            leverage: 0.0,
            vol_jumps: None,
        }
    }

    pub fn with_vol(vol: VolModel) -> Self {
        ModelSpec {
            vol,
            ..Self::constant(0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x0.is_finite() {
            return Err(Error::param("x0 must be finite"));
        }
        if !(-1.0..=1.0).contains(&self.leverage) {
            return Err(Error::param(format!(
                "leverage must lie in [-1, 1], got {}",
                self.leverage
            )));
        }
        match &self.drift {
            Drift::Constant(c) if !c.is_finite() => return Err(Error::param("drift must be finite")),
            Drift::TimeVarying { bound, .. } if !(bound.is_finite() && *bound >= 0.0) => {
                return Err(Error::param("drift bound must be finite and nonnegative"))
            }
            _ => {}
        }
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be finite and nonnegative, got {v}")))
            }
        };
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be positive, got {v}")))
            }
        };
        match &self.vol {
            VolModel::Constant { sigma } => nonneg("sigma", *sigma)?,
            VolModel::Linear { a, b } => {
                nonneg("variance intercept", *a)?;
                if !b.is_finite() {
                    return Err(Error::param("variance slope must be finite"));
                }
            }
            VolModel::Deterministic { bound, .. } => nonneg("variance bound", *bound)?,
            VolModel::Cir {
                kappa,
                theta,
                xi,
                v0,
                allow_feller_violation,
            } => {
                pos("kappa", *kappa)?;
                pos("theta", *theta)?;
                nonneg("xi", *xi)?;
                nonneg("v0", *v0)?;
                if !allow_feller_violation && 2.0 * kappa * theta < xi * xi {
                    return Err(Error::param(format!(
                        "Feller condition 2κθ >= ξ² fails ({} < {}); enable truncation to proceed",
                        2.0 * kappa * theta,
                        xi * xi
                    )));
                }
            }
            VolModel::LogOu {
                kappa,
                theta,
                xi,
                sigma0,
            } => {
                pos("kappa", *kappa)?;
                if !theta.is_finite() {
                    return Err(Error::param("theta must be finite"));
                }
                nonneg("xi", *xi)?;
                pos("sigma0", *sigma0)?;
            }
        }
        if let Some(j) = &self.vol_jumps {
            nonneg("jump intensity", j.intensity)?;
            nonneg("jump log-size sd", j.log_sd)?;
            if !j.log_mean.is_finite() {
                return Err(Error::param("jump log-size mean must be finite"));
            }
        }
        Ok(())
    }

    /// JSON description used in report headers.
    pub fn describe(&self) -> Value {
        let drift = match &self.drift {
            Drift::Constant(c) => json!({ "constant": c }),
            Drift::TimeVarying { bound, .. } => json!({ "time_varying": { "bound": bound } }),
        };
        let vol = match &self.vol {
            VolModel::Constant { sigma } => json!({ "constant": { "sigma": sigma } }),
            VolModel::Linear { a, b } => json!({ "linear": { "a": a, "b": b } }),
            VolModel::Deterministic { bound, .. } => json!({ "deterministic": { "bound": bound } }),
            VolModel::Cir {
                kappa,
                theta,
                xi,
                v0,
                allow_feller_violation,
            } => json!({ "cir": {
                "kappa": kappa, "theta": theta, "xi": xi, "v0": v0,
                "allow_feller_violation": allow_feller_violation,
            }}),
            VolModel::LogOu {
                kappa,
                theta,
                xi,
                sigma0,
            } => json!({ "log_ou": { "kappa": kappa, "theta": theta, "xi": xi, "sigma0": sigma0 } }),
        };
        let jumps = self.vol_jumps.map(|j| {
            json!({ "intensity": j.intensity, "log_mean": j.log_mean, "log_sd": j.log_sd })
        });
        json!({
            "x0": self.x0,
            "drift": drift,
            "vol": vol,
            "leverage": self.leverage,
            "vol_jumps": jumps,
        })
    }
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelSpec({})", self.describe())
    }
}

/// Variance state advanced one sub-step at a time.
#[derive(Debug, Clone, Copy)]
enum VolState {
    /// Deterministic base variance times the accumulated jump multiplier.
    Scaled { multiplier: f64 },
    /// Raw CIR Euler state; may dip below zero, the effective variance is its positive part.
    Cir { v: f64 },
    LogOu { log_sigma: f64 },
}

impl VolState {
    fn initial(vol: &VolModel) -> Self {
        match vol {
            VolModel::Cir { v0, .. } => VolState::Cir { v: *v0 },
            VolModel::LogOu { sigma0, .. } => VolState::LogOu {
                log_sigma: sigma0.ln(),
            },
            _ => VolState::Scaled { multiplier: 1.0 },
        }
    }

    fn variance(&self, vol: &VolModel, t: f64) -> f64 {
        match (*self, vol) {
            (VolState::Scaled { multiplier }, VolModel::Constant { sigma }) => sigma * sigma * multiplier,
            (VolState::Scaled { multiplier }, VolModel::Linear { a, b }) => (a + b * t).max(0.0) * multiplier,
            (VolState::Scaled { multiplier }, VolModel::Deterministic { variance, .. }) => {
                variance(t).max(0.0) * multiplier
            }
            (VolState::Cir { v }, _) => v.max(0.0),
            (VolState::LogOu { log_sigma }, _) => (2.0 * log_sigma).exp(),
            _ => unreachable!("state built from the same model"),
        }
    }

    /// Advances the diffusive part over `[t, t + h]` given a standard normal shock.
    fn diffuse(&mut self, vol: &VolModel, h: f64, z: f64) {
        match (self, vol) {
            (VolState::Cir { v }, VolModel::Cir { kappa, theta, xi, .. }) => {
                let vp = v.max(0.0);
                *v += kappa * (theta - vp) * h + xi * (vp * h).sqrt() * z;
            }
            (VolState::LogOu { log_sigma }, VolModel::LogOu { kappa, theta, xi, .. }) => {
                let decay = (-kappa * h).exp();
                let sd = xi * ((1.0 - decay * decay) / (2.0 * kappa)).sqrt();
                *log_sigma = theta + (*log_sigma - theta) * decay + sd * z;
            }
            _ => {}
        }
    }

    fn jump(&mut self, log_factor: f64) {
        match self {
            VolState::Scaled { multiplier } => *multiplier *= log_factor.exp(),
            VolState::Cir { v } => *v *= log_factor.exp(),
            VolState::LogOu { log_sigma } => *log_sigma += 0.5 * log_factor,
        }
    }

    fn is_stochastic(vol: &VolModel) -> bool {
        matches!(vol, VolModel::Cir { .. } | VolModel::LogOu { .. })
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedPath {
    fine_times: Vec<f64>,
    fine_sigma2: Vec<f64>,
    sample_x: Vec<f64>,
    sample_sigma2: Vec<f64>,
    grid: SampleGrid,
}

impl SimulatedPath {
    pub fn fine_times(&self) -> &[f64] {
        &self.fine_times
    }

    pub fn fine_sigma2(&self) -> &[f64] {
        &self.fine_sigma2
    }

    pub fn sample_x(&self) -> &[f64] {
        &self.sample_x
    }

    pub fn sample_sigma2(&self) -> &[f64] {
        &self.sample_sigma2
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    /// `∫ g(σ²(u)) du` over `[0, t_N]`, left-endpoint rule on the fine grid.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        integrate_left(&self.fine_times, &self.fine_sigma2, g)
    }

    /// Integrated variance over `[0, t_N]`.
    pub fn integrated_variance(&self) -> f64 {
        self.integrate(|s2| s2)
    }
}

pub(crate) fn integrate_left<G: Fn(f64) -> f64>(times: &[f64], values: &[f64], g: G) -> f64 {
    times
        .windows(2)
        .zip(values)
        .map(|(w, &v)| g(v) * (w[1] - w[0]))
        .sum()
}

/// Left-endpoint Riemann sum of `g(σ²(u))` over the fine grid of `path`.
pub fn integrate_on_fine_grid<G: Fn(f64) -> f64>(path: &SimulatedPath, g: G) -> f64 {
    path.integrate(g)
}

/// Simulates `(X, σ²)` on a refinement of `grid` with sub-steps of at most `max_step`.
///
/// On each sub-step `[s, s + h]` the price moves by `b(s)·h + σ_s·√h·Z` with
/// the variance frozen at its left value, then the variance advances. With
/// constant drift and volatility the sampled increments are exact Gaussians.
pub fn simulate_path(model: &ModelSpec, grid: &SampleGrid, max_step: f64, seed: u64) -> Result<SimulatedPath> {
    if !(max_step.is_finite() && max_step > 0.0) {
        return Err(Error::param(format!("max_step must be positive, got {max_step}")));
    }
    model.validate()?;

    let mut rng = rng_from_seed(seed);
    let jumps = match model.vol_jumps {
        Some(j) if j.intensity > 0.0 => Some(j),
        _ => None,
    };
    let stochastic = VolState::is_stochastic(&model.vol);
    let lev = model.leverage;
    let lev_perp = (1.0 - lev * lev).sqrt();

    let n_fine_hint = grid
        .durations()
        .iter()
        .map(|d| (d / max_step).ceil() as usize)
        .sum::<usize>()
        + 1;
    let mut fine_times = Vec::with_capacity(n_fine_hint);
    let mut fine_sigma2 = Vec::with_capacity(n_fine_hint);
    let mut sample_x = Vec::with_capacity(grid.times().len());
    let mut sample_sigma2 = Vec::with_capacity(grid.times().len());

    let mut state = VolState::initial(&model.vol);
    let mut x = model.x0;
    let t0 = grid.times()[0];
    sample_x.push(x);
    sample_sigma2.push(state.variance(&model.vol, t0));

    for (w, &tau) in grid.times().windows(2).zip(grid.durations()) {
        let (start, end) = (w[0], w[1]);
        let steps = ((tau / max_step).ceil() as usize).max(1);
        let h = tau / steps as f64;
        let sqrt_h = h.sqrt();
        for j in 0..steps {
            let s = start + j as f64 * h;
            let s2 = state.variance(&model.vol, s);
            fine_times.push(s);
            fine_sigma2.push(s2);

            let b = match &model.drift {
                Drift::Constant(c) => *c,
                Drift::TimeVarying { func, bound } => {
                    let b = func(s);
                    if !(b.abs() <= *bound) {
                        return Err(Error::param(format!("drift b({s}) = {b} exceeds its bound {bound}")));
                    }
                    b
                }
            };
            if let VolModel::Deterministic { bound, .. } = &model.vol {
                if s2 > *bound * state_multiplier(&state) {
                    return Err(Error::param(format!("variance σ²({s}) = {s2} exceeds its bound {bound}")));
                }
            }

            let z_price: f64 = rng.sample(StandardNormal);
            let dw = if stochastic {
                let z_vol: f64 = rng.sample(StandardNormal);
                state.diffuse(&model.vol, h, z_vol);
                lev * z_vol + lev_perp * z_price
            } else {
                z_price
            };
            x += b * h + s2.sqrt() * sqrt_h * dw;

            if let Some(j) = jumps {
                let count = Poisson::new(j.intensity * h)
                    .map(|p| p.sample(&mut rng) as u64)
                    .unwrap_or(0);
                for _ in 0..count {
                    let size: f64 = rng.sample(StandardNormal);
                    state.jump(j.log_mean + j.log_sd * size);
                }
            }
        }
        sample_x.push(x);
        sample_sigma2.push(state.variance(&model.vol, end));
    }

    let t_last = grid.last_time();
    fine_times.push(t_last);
    fine_sigma2.push(state.variance(&model.vol, t_last));

    Ok(SimulatedPath {
        fine_times,
        fine_sigma2,
        sample_x,
        sample_sigma2,
        grid: grid.clone(),
    })
}

fn state_multiplier(state: &VolState) -> f64 {
    match state {
        VolState::Scaled { multiplier } => *multiplier,
        _ => 1.0,
    }
}
