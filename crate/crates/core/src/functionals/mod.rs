//! Functionals of increments on a sampled path.

mod parse;
mod testfn;

pub use parse::parse_test_function;
pub use testfn::{Evaluator, Factor, Monomial, Representation, TestFunction};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pathsim::SimulatedPath;

/// A process observed at strictly increasing times.
pub trait Observations {
    fn obs_times(&self) -> &[f64];
    fn obs_values(&self) -> &[f64];

    fn increments(&self) -> Vec<f64> {
        self.obs_values().windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn durations(&self) -> Vec<f64> {
        self.obs_times().windows(2).map(|w| w[1] - w[0]).collect()
    }
}

impl Observations for SimulatedPath {
    fn obs_times(&self) -> &[f64] {
        self.grid().times()
    }

    fn obs_values(&self) -> &[f64] {
        self.sample_x()
    }
}

/// Plain `(times, values)` pair, e.g. a path read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Observations for Series {
    fn obs_times(&self) -> &[f64] {
        &self.times
    }

    fn obs_values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FunctionalResult {
    pub value: f64,
    pub terms_used: usize,
}

/// `V(f) = Σ f(Δ_i X)` over raw increments; `f` must have `k = 1`.
pub fn v_functional(f: &TestFunction, obs: &impl Observations) -> Result<FunctionalResult> {
    if f.k() != 1 {
        return Err(Error::param(format!("V(f) needs a one-dimensional f, got k = {}", f.k())));
    }
    let inc = obs.increments();
    Ok(FunctionalResult {
        value: inc.iter().map(|&d| f.eval_unchecked(&[d])).sum(),
        terms_used: inc.len(),
    })
}

/// Increments divided by the square root of their durations.
pub fn normalized_increments(obs: &impl Observations) -> Result<Vec<f64>> {
    let x = obs.obs_values();
    let t = obs.obs_times();
    if x.len() != t.len() {
        return Err(Error::data(format!(
            "{} values observed at {} times",
            x.len(),
            t.len()
        )));
    }
    x.windows(2)
        .zip(t.windows(2))
        .enumerate()
        .map(|(i, (xw, tw))| {
            let tau = tw[1] - tw[0];
            if tau > 0.0 {
                Ok((xw[1] - xw[0]) / tau.sqrt())
            } else {
                Err(Error::data(format!("non-positive duration {tau} at increment {}", i + 1)))
            }
        })
        .collect()
}

/// The individual summands `f(y_i, ..., y_{i+k-1})` of `V'(f, k)`, one per
/// complete window of normalized increments.
pub fn v_prime_terms(f: &TestFunction, obs: &impl Observations) -> Result<Vec<f64>> {
    let y = normalized_increments(obs)?;
    Ok(window_terms(f, &y))
}

pub(crate) fn window_terms(f: &TestFunction, normalized: &[f64]) -> Vec<f64> {
    if normalized.len() < f.k() {
        return Vec::new();
    }
    normalized.windows(f.k()).map(|w| f.eval_unchecked(w)).collect()
}

/// `V'(f, k) = Σ_i f(Δ_i X/√τ_i, ..., Δ_{i+k-1} X/√τ_{i+k-1})`.
///
/// Windows that would run past the last observation are dropped, so the
/// sum has `N - k + 1` terms (none when `N < k`).
pub fn v_prime_functional(f: &TestFunction, obs: &impl Observations) -> Result<FunctionalResult> {
    let terms = v_prime_terms(f, obs)?;
    Ok(FunctionalResult {
        value: terms.iter().sum(),
        terms_used: terms.len(),
    })
}

/// `B(p) = Σ |Δ_i X|^p`.
pub fn b_variation(p: f64, obs: &impl Observations) -> Result<FunctionalResult> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::param(format!("variation order must be positive, got {p}")));
    }
    let power = Factor::abs(p);
    let inc = obs.increments();
    Ok(FunctionalResult {
        value: inc.iter().map(|&d| power.eval(d)).sum(),
        terms_used: inc.len(),
    })
}
