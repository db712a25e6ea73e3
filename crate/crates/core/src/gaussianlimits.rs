//! Gaussian limit quantities of the normalized functional.
//!
//! For a monomial-sum `f` every expectation reduces to products of
//! one-dimensional Gaussian moments: distinct `U` indices are independent,
//! and factors that land on the same index merge their exponents. Each
//! quantity is then a finite sum `Σ c_d σ^d`, precomputed once per `f` and
//! evaluated cheaply along a volatility path.
//!
//! General `f` falls back to tensor Gauss–Hermite quadrature (up to three
//! dimensions) or seeded Monte Carlo.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Mutex;

use gauss_quad::hermite::GaussHermite;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::functionals::{v_prime_functional, Factor, Observations, Representation, TestFunction};
use crate::pathsim::SimulatedPath;
use crate::sampling::DurationStats;
use crate::seed::{rng_from_seed, splitmix64};

pub const DEFAULT_QUADRATURE_NODES: usize = 21;
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;
const MC_SEED: u64 = 0x5EED_0F_u64;
const MAX_QUADRATURE_DIM: usize = 3;
/// Tolerance below zero tolerated for `R'` before it is reported.
pub const NONNEGATIVITY_TOL: f64 = 1e-10;

/// `E|U|^p` for `U ~ N(0, 1)`.
pub fn abs_moment(p: f64) -> f64 {
    if p == 0.0 {
        return 1.0;
    }
    if p.fract() == 0.0 && p <= 300.0 && (p as u64) % 2 == 0 {
        // (p-1)!!, exact in f64 for the moments that matter here.
        let mut acc = 1.0;
        let mut j = p as u64 - 1;
        while j > 1 {
            acc *= j as f64;
            j -= 2;
        }
        return acc;
    }
    2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / PI.sqrt()
}

/// `E[sgn(U)^s |U|^p]`: zero for odd factors by symmetry.
fn factor_moment(f: &Factor) -> f64 {
    if f.odd {
        0.0
    } else {
        abs_moment(f.power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

/// `Σ c_d σ^d`, stored with distinct degrees.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SigmaPoly {
    terms: Vec<(f64, f64)>,
}

impl SigmaPoly {
    fn add(&mut self, degree: f64, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        match self.terms.iter_mut().find(|(d, _)| *d == degree) {
            Some((_, c)) => *c += coeff,
            None => self.terms.push((degree, coeff)),
        }
    }

    fn square(&self) -> SigmaPoly {
        let mut out = SigmaPoly::default();
        for &(da, ca) in &self.terms {
            for &(db, cb) in &self.terms {
                out.add(da + db, ca * cb);
            }
        }
        out
    }

    fn axpy(&self, alpha: f64, other: &SigmaPoly) -> SigmaPoly {
        let mut out = self.clone();
        for &(d, c) in &other.terms {
            out.add(d, alpha * c);
        }
        out
    }

    /// Evaluates at spot variance `σ²`.
    pub fn eval(&self, sigma2: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(d, c)| {
                if d == 0.0 {
                    c
                } else if d == 2.0 {
                    c * sigma2
                } else if d == 4.0 {
                    c * sigma2 * sigma2
                } else {
                    c * sigma2.powf(d / 2.0)
                }
            })
            .sum()
    }

    pub fn terms(&self) -> &[(f64, f64)] {
        &self.terms
    }
}

/// Closed-form `ρ`, overlap sum and `R` for a monomial-sum `f`.
#[derive(Debug, Clone)]
struct ClosedForm {
    rho: SigmaPoly,
    overlap: SigmaPoly,
    r_plain: SigmaPoly,
}

impl ClosedForm {
    fn new(f: &TestFunction) -> Option<Self> {
        let terms = f.monomials()?;
        let k = f.k() as isize;

        let mut rho = SigmaPoly::default();
        for t in terms {
            let m: f64 = t.factors.iter().map(factor_moment).product();
            rho.add(t.degree(), t.coeff * m);
        }

        // Window A covers indices 0..k, window B covers l..l+k.
        let mut overlap = SigmaPoly::default();
        for lag in -(k - 1)..=(k - 1) {
            let lo = lag.min(0);
            let hi = (k - 1).max(lag + k - 1);
            for a in terms {
                for b in terms {
                    let mut e = a.coeff * b.coeff;
                    for u in lo..=hi {
                        let fa = (0..k).contains(&u).then(|| a.factors[u as usize]);
                        let fb = (0..k).contains(&(u - lag)).then(|| b.factors[(u - lag) as usize]);
                        let merged = match (fa, fb) {
                            (Some(x), Some(y)) => x.merge(y),
                            (Some(x), None) | (None, Some(x)) => x,
                            (None, None) => Factor::ONE,
                        };
                        e *= factor_moment(&merged);
                        if e == 0.0 {
                            break;
                        }
                    }
                    overlap.add(a.degree() + b.degree(), e);
                }
            }
        }
        let r_plain = overlap.axpy(-((2 * k - 1) as f64), &rho.square());
        Some(ClosedForm { rho, overlap, r_plain })
    }
}

/// Numerical route for general `f`, memoized per spot variance.
struct Numeric {
    nodes: Vec<(f64, f64)>,
    mc_samples: usize,
    cache: Mutex<HashMap<u64, NumericValues>>,
}

#[derive(Debug, Clone, Copy)]
struct NumericValues {
    rho: f64,
    overlap: f64,
    std_error: Option<f64>,
}

impl Numeric {
    fn new(n_nodes: usize, mc_samples: usize) -> Result<Self> {
        let rule = GaussHermite::new(n_nodes).map_err(|e| Error::param(e.to_string()))?;
        // Nodes for weight e^{-x²}; rescale to the standard normal.
        let nodes = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (x * std::f64::consts::SQRT_2, w / PI.sqrt()))
            .collect();
        Ok(Numeric {
            nodes,
            mc_samples,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn tensor<G: FnMut(&[f64]) -> f64>(&self, dim: usize, mut g: G) -> f64 {
        let m = self.nodes.len();
        let mut idx = vec![0usize; dim];
        let mut u = vec![0.0; dim];
        let mut acc = 0.0;
        loop {
            let mut w = 1.0;
            for (j, &i) in idx.iter().enumerate() {
                u[j] = self.nodes[i].0;
                w *= self.nodes[i].1;
            }
            acc += w * g(&u);
            let mut j = 0;
            loop {
                if j == dim {
                    return acc;
                }
                idx[j] += 1;
                if idx[j] < m {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }

    fn values(&self, f: &TestFunction, sigma2: f64) -> NumericValues {
        let key = sigma2.to_bits();
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return *v;
        }
        let v = self.compute(f, sigma2);
        self.cache.lock().expect("cache lock").insert(key, v);
        v
    }

    fn compute(&self, f: &TestFunction, sigma2: f64) -> NumericValues {
        let k = f.k();
        let sigma = sigma2.sqrt();
        let mc = (2 * k - 1 > MAX_QUADRATURE_DIM).then(|| self.monte_carlo(f, sigma));
        let rho = if k <= MAX_QUADRATURE_DIM {
            let mut buf = vec![0.0; k];
            self.tensor(k, |u| {
                for (b, &x) in buf.iter_mut().zip(u) {
                    *b = sigma * x;
                }
                f.eval_unchecked(&buf)
            })
        } else {
            mc.expect("k > 3 implies the Monte Carlo route").rho
        };
        if let Some(mc) = mc {
            return NumericValues { rho, ..mc };
        }
        let mut overlap = 0.0;
        let mut wa = vec![0.0; k];
        let mut wb = vec![0.0; k];
        for lag in -(k as isize - 1)..=(k as isize - 1) {
            let dim = k + lag.unsigned_abs();
            let shift = lag.min(0);
            overlap += self.tensor(dim, |u| {
                for j in 0..k {
                    wa[j] = sigma * u[(j as isize - shift) as usize];
                    wb[j] = sigma * u[(j as isize + lag - shift) as usize];
                }
                f.eval_unchecked(&wa) * f.eval_unchecked(&wb)
            });
        }
        NumericValues {
            rho,
            overlap,
            std_error: None,
        }
    }

    /// Draws `U_1..U_{3k-2}` and accumulates, per draw, the overlap sum
    /// around the centre window together with `f` on that window.
    fn monte_carlo(&self, f: &TestFunction, sigma: f64) -> NumericValues {
        let k = f.k();
        let width = 3 * k - 2;
        let mut rng = rng_from_seed(splitmix64(MC_SEED ^ sigma.to_bits()));
        let mut u = vec![0.0; width];
        let (mut s_rho, mut s_rho2, mut s_ov, mut s_ov2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..self.mc_samples {
            for x in u.iter_mut() {
                *x = sigma * rng.sample::<f64, _>(StandardNormal);
            }
            let centre = f.eval_unchecked(&u[k - 1..2 * k - 1]);
            let ov: f64 = (0..2 * k - 1).map(|s| centre * f.eval_unchecked(&u[s..s + k])).sum();
            s_rho += centre;
            s_rho2 += centre * centre;
            s_ov += ov;
            s_ov2 += ov * ov;
        }
        let n = self.mc_samples as f64;
        let rho = s_rho / n;
        let overlap = s_ov / n;
        let se_rho = ((s_rho2 / n - rho * rho).max(0.0) / n).sqrt();
        let se_ov = ((s_ov2 / n - overlap * overlap).max(0.0) / n).sqrt();
        NumericValues {
            rho,
            overlap,
            std_error: Some(se_rho.max(se_ov)),
        }
    }
}

/// Prepared evaluator of `ρ`, `R` and `R'` for one test function.
pub struct LimitEvaluator<'f> {
    f: &'f TestFunction,
    route: Route,
}

enum Route {
    Closed(ClosedForm),
    Numeric(Numeric),
}

impl<'f> LimitEvaluator<'f> {
    pub fn new(f: &'f TestFunction) -> Result<Self> {
        Self::with_settings(f, DEFAULT_QUADRATURE_NODES, DEFAULT_MC_SAMPLES)
    }

    pub fn with_settings(f: &'f TestFunction, quadrature_nodes: usize, mc_samples: usize) -> Result<Self> {
        let route = match f.representation() {
            Representation::Monomials(_) => Route::Closed(ClosedForm::new(f).expect("monomial form")),
            Representation::General { .. } => {
                if mc_samples < 2 {
                    return Err(Error::param("Monte Carlo sample count must be at least 2"));
                }
                Route::Numeric(Numeric::new(quadrature_nodes, mc_samples)?)
            }
        };
        Ok(LimitEvaluator { f, route })
    }

    pub fn function(&self) -> &TestFunction {
        self.f
    }

    pub fn method(&self) -> Method {
        match &self.route {
            Route::Closed(_) => Method::ClosedForm,
            Route::Numeric(_) if 2 * self.f.k() - 1 <= MAX_QUADRATURE_DIM => Method::Quadrature,
            Route::Numeric(_) => Method::MonteCarlo,
        }
    }

    /// Closed-form coefficients of `ρ` and `R` in powers of `σ`, when available.
    pub fn polynomials(&self) -> Option<(&SigmaPoly, &SigmaPoly)> {
        match &self.route {
            Route::Closed(c) => Some((&c.rho, &c.r_plain)),
            Route::Numeric(_) => None,
        }
    }

    fn check(sigma2: f64) -> Result<()> {
        if sigma2.is_finite() && sigma2 >= 0.0 {
            Ok(())
        } else {
            Err(Error::param(format!("spot variance must be nonnegative, got {sigma2}")))
        }
    }

    /// `(ρ, overlap sum, Monte Carlo standard error)` at `σ²`.
    fn parts(&self, sigma2: f64) -> (f64, f64, Option<f64>) {
        match &self.route {
            Route::Closed(c) => (c.rho.eval(sigma2), c.overlap.eval(sigma2), None),
            Route::Numeric(n) => {
                let v = n.values(self.f, sigma2);
                (v.rho, v.overlap, v.std_error)
            }
        }
    }

    /// `ρ_σ^{⊗k}(f) = E f(σU_1, ..., σU_k)`.
    pub fn rho(&self, sigma2: f64) -> Result<f64> {
        Self::check(sigma2)?;
        Ok(self.parts(sigma2).0)
    }

    /// `R_σ(f, k)`: overlap sum over lags `|l| < k` minus `(2k-1) ρ²`.
    pub fn r_plain(&self, sigma2: f64) -> Result<f64> {
        Self::check(sigma2)?;
        Ok(match &self.route {
            Route::Closed(c) => c.r_plain.eval(sigma2),
            Route::Numeric(_) => {
                let (rho, overlap, _) = self.parts(sigma2);
                overlap - (2 * self.f.k() - 1) as f64 * rho * rho
            }
        })
    }

    /// `R'_σ(f, k) = R_σ(f, k) + M ρ²`.
    pub fn r_prime(&self, sigma2: f64, m: f64) -> Result<f64> {
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::param(format!("M must be nonnegative, got {m}")));
        }
        let rho = self.rho(sigma2)?;
        Ok(self.r_plain(sigma2)? + m * rho * rho)
    }

    /// Largest Monte Carlo standard error seen at `σ²`, if that route was used.
    pub fn std_error(&self, sigma2: f64) -> Option<f64> {
        self.parts(sigma2).2
    }
}

pub fn rho(f: &TestFunction, sigma2: f64) -> Result<f64> {
    LimitEvaluator::new(f)?.rho(sigma2)
}

pub fn r_plain(f: &TestFunction, sigma2: f64) -> Result<f64> {
    LimitEvaluator::new(f)?.r_plain(sigma2)
}

pub fn r_prime(f: &TestFunction, sigma2: f64, m: f64) -> Result<f64> {
    LimitEvaluator::new(f)?.r_prime(sigma2, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitQuantities {
    /// `∫_0^{t_N} ρ_{σ_u}(f) du`.
    pub rho_integral: f64,
    /// `∫_0^{t_N} R'_{σ_u}(f, k) du`.
    pub rprime_integral: f64,
    pub m: f64,
    pub method: Method,
    pub mc_std_error: Option<f64>,
    /// Most negative `R'` density met on the path, when below `-NONNEGATIVITY_TOL`.
    pub negative_density: Option<f64>,
}

/// Integrals of `ρ` and `R'` along the fine grid of a simulated path.
pub fn limit_integrals(eval: &LimitEvaluator<'_>, path: &SimulatedPath, m: f64) -> Result<LimitQuantities> {
    limit_integrals_on(eval, path.fine_times(), path.fine_sigma2(), m)
}

pub(crate) fn limit_integrals_on(
    eval: &LimitEvaluator<'_>,
    times: &[f64],
    sigma2: &[f64],
    m: f64,
) -> Result<LimitQuantities> {
    if !(m.is_finite() && m >= 0.0) {
        return Err(Error::param(format!("M must be nonnegative, got {m}")));
    }
    let mut rho_integral = 0.0;
    let mut rprime_integral = 0.0;
    let mut worst = 0.0f64;
    let mut se: Option<f64> = None;
    // Constant stretches are common; reuse the last evaluation.
    let mut last: Option<(f64, f64, f64)> = None;
    for (w, &s2) in times.windows(2).zip(sigma2) {
        let h = w[1] - w[0];
        let (rho, rp) = match last {
            Some((v, r, p)) if v == s2 => (r, p),
            _ => {
                let rho = eval.rho(s2)?;
                let rp = eval.r_prime(s2, m)?;
                if let Some(e) = eval.std_error(s2) {
                    se = Some(se.map_or(e, |s: f64| s.max(e)));
                }
                last = Some((s2, rho, rp));
                (rho, rp)
            }
        };
        worst = worst.min(rp);
        rho_integral += rho * h;
        rprime_integral += rp * h;
    }
    Ok(LimitQuantities {
        rho_integral,
        rprime_integral,
        m,
        method: eval.method(),
        mc_std_error: se,
        negative_density: (worst < -NONNEGATIVITY_TOL).then_some(worst),
    })
}

/// `(Δ_n V' - ∫ρ) / √(Δ_n ∫R')`, asymptotically standard normal given the
/// volatility path.
pub fn studentize(v_prime_value: f64, lq: &LimitQuantities, mean_duration: f64) -> Result<f64> {
    if !(mean_duration > 0.0) {
        return Err(Error::param(format!("mean duration must be positive, got {mean_duration}")));
    }
    if !(lq.rprime_integral > 0.0) {
        return Err(Error::DegenerateVariance(format!(
            "integrated R' is {}, cannot studentize",
            lq.rprime_integral
        )));
    }
    Ok((mean_duration * v_prime_value - lq.rho_integral) / (mean_duration * lq.rprime_integral).sqrt())
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").cdf(x)
}

/// How the mean duration entering the estimator is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanDuration {
    /// Sample mean of the observed durations.
    Estimated,
    /// A known `Δ_n`, e.g. from the sampling design.
    Known(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IvInterval {
    pub iv_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub std_error: f64,
    pub mean_duration: f64,
    pub m_hat: f64,
    /// Plug-in `∫σ⁴`.
    pub quarticity: f64,
}

/// Confidence interval for integrated variance from the normalized
/// realized variance, with plug-in quarticity `Δ V'(x⁴) / 3`.
///
/// With a known `Δ_n` the asymptotic variance is `Δ_n (2 + M̂) Q̂`. With the
/// sample-mean duration `Δ̂ = t_N / N` the duration noise mostly cancels:
/// `Σ (Δ̂ - τ_i) σ̄_i²` only sees the spread of `σ²` over time, and the
/// variance becomes `Δ̂ (2 Q̂ + M̂ (Q̂ - IV̂² / t_N))`.
pub fn feasible_iv_ci(obs: &impl Observations, confidence: f64, mode: MeanDuration) -> Result<IvInterval> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::param(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let durations = obs.durations();
    let stats = DurationStats::from_durations(&durations)?;
    let sq = TestFunction::power(2);
    let quart = TestFunction::power(4);
    let vp2 = v_prime_functional(&sq, obs)?.value;
    let vp4 = v_prime_functional(&quart, obs)?.value;

    let (delta, variance) = match mode {
        MeanDuration::Known(delta) => {
            if !(delta.is_finite() && delta > 0.0) {
                return Err(Error::param(format!("mean duration must be positive, got {delta}")));
            }
            let q = delta * vp4 / 3.0;
            (delta, delta * (2.0 + stats.m_hat) * q)
        }
        MeanDuration::Estimated => {
            let delta = stats.mean_duration;
            let span: f64 = durations.iter().sum();
            let iv = delta * vp2;
            let q = delta * vp4 / 3.0;
            let dispersion = (q - iv * iv / span).max(0.0);
            (delta, delta * (2.0 * q + stats.m_hat * dispersion))
        }
    };
    let iv_hat = delta * vp2;
    let quarticity = delta * vp4 / 3.0;
    if !(variance > 0.0) {
        return Err(Error::DegenerateVariance(
            "estimated quarticity is zero (constant price?)".into(),
        ));
    }
    let se = variance.sqrt();
    let z = normal_quantile(0.5 + confidence / 2.0);
    Ok(IvInterval {
        iv_hat,
        lo: iv_hat - z * se,
        hi: iv_hat + z * se,
        std_error: se,
        mean_duration: delta,
        m_hat: stats.m_hat,
        quarticity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{parse_test_function, Monomial, Series};
    use crate::pathsim::{simulate_path, ModelSpec, VolModel};
    use crate::sampling::{gen_sampling_times, SamplingScheme};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn f(s: &str) -> TestFunction {
        parse_test_function(s).unwrap()
    }

    #[test]
    fn absolute_moments() {
        assert_eq!(abs_moment(2.0), 1.0);
        assert_eq!(abs_moment(4.0), 3.0);
        assert_eq!(abs_moment(8.0), 105.0);
        assert!((abs_moment(1.0) - (2.0 / PI).sqrt()).abs() < 1e-15);
        assert!((abs_moment(3.0) - 2f64.powf(1.5) / PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho(&f("x^2"), 4.0).unwrap(), 4.0);
        assert_eq!(rho(&f("x^4"), 1.0).unwrap(), 3.0);
        assert!((rho(&f("|x|^3"), 1.0).unwrap() - 1.595_769_121_605_731).abs() < 1e-12);
        assert_eq!(rho(&f("x1^2*x2^2"), 1.0).unwrap(), 1.0);
        assert!(matches!(rho(&f("x^2"), -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn r_examples() {
        assert_eq!(r_plain(&f("x^2"), 1.0).unwrap(), 2.0);
        assert_eq!(r_plain(&f("x1^2*x2^2"), 1.0).unwrap(), 12.0);
        assert_eq!(r_plain(&f("3"), 2.0).unwrap(), 0.0);
        assert_eq!(r_plain(&f("x1*x2*x3*0 + 3"), 2.0).unwrap(), 0.0);
        assert_eq!(r_prime(&f("x^2"), 1.0, 0.0).unwrap(), 2.0);
        assert_eq!(r_prime(&f("x^2"), 1.0, 1.0).unwrap(), 3.0);
        assert_eq!(r_prime(&f("x^4"), 1.0, 0.0).unwrap(), 96.0);
        assert_eq!(r_prime(&f("2.5"), 1.7, 0.4).unwrap(), 0.4 * 6.25);
        assert!(r_prime(&f("x^2"), 1.0, -0.1).is_err());
    }

    #[test]
    fn constant_function_any_k() {
        let c = TestFunction::constant(3, 2.0).unwrap();
        assert_eq!(r_plain(&c, 0.7).unwrap(), 0.0);
        assert_eq!(r_prime(&c, 0.7, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn general_route_matches_closed_form() {
        // k = 1 and k = 2 use quadrature, k = 3 Monte Carlo.
        for s in ["x^4 + 2*x^2", "x1^2*x2^2", "|x1|^1.5*x2^2 + x1*x2"] {
            let closed = f(s);
            let inner = closed.clone();
            let general = TestFunction::general(s, closed.k(), Arc::new(move |x: &[f64]| inner.eval_unchecked(x)), 4.0, true, false).unwrap();
            let ce = LimitEvaluator::new(&closed).unwrap();
            let ge = LimitEvaluator::new(&general).unwrap();
            assert_eq!(ge.method(), Method::Quadrature);
            // |x|^1.5 is not smooth at 0; 21 nodes only reach ~1%.
            let rel = if s.contains('|') { 1e-2 } else { 1e-10 };
            for s2 in [0.5, 1.0, 2.0] {
                for (c, g) in [
                    (ce.rho(s2).unwrap(), ge.rho(s2).unwrap()),
                    (ce.r_plain(s2).unwrap(), ge.r_plain(s2).unwrap()),
                ] {
                    assert!((c - g).abs() <= rel * c.abs().max(1.0), "{s}: {c} vs {g}");
                }
            }
        }
        let closed = f("x1^2*x2^2*x3^2");
        let inner = closed.clone();
        let general = TestFunction::general("x1^2*x2^2*x3^2", 3, Arc::new(move |x: &[f64]| inner.eval_unchecked(x)), 2.0, true, true).unwrap();
        let ge = LimitEvaluator::with_settings(&general, 21, 200_000).unwrap();
        assert_eq!(ge.method(), Method::MonteCarlo);
        let se = ge.std_error(1.0).unwrap();
        let ce = LimitEvaluator::new(&closed).unwrap();
        assert!((ge.rho(1.0).unwrap() - 1.0).abs() < 1e-10);
        let ov_closed = ce.r_plain(1.0).unwrap() + 5.0;
        let ov_mc = ge.r_plain(1.0).unwrap() + 5.0 * ge.rho(1.0).unwrap().powi(2);
        assert!((ov_closed - ov_mc).abs() < 4.0 * se, "{ov_closed} vs {ov_mc} (se {se})");
    }

    #[test]
    fn limit_integrals_constant_and_linear() {
        let grid = gen_sampling_times(&SamplingScheme::deterministic(0.01).unwrap(), 1.0, 0).unwrap();
        let sq = f("x^2");
        let ev = LimitEvaluator::new(&sq).unwrap();

        let p = simulate_path(&ModelSpec::constant(1.0), &grid, 0.0025, 1).unwrap();
        let lq = limit_integrals(&ev, &p, 1.0).unwrap();
        assert!((lq.rho_integral - 1.0).abs() < 1e-12);
        assert!((lq.rprime_integral - 3.0).abs() < 1e-12);
        assert_eq!(lq.method, Method::ClosedForm);

        let p = simulate_path(&ModelSpec::constant(0.0), &grid, 0.0025, 1).unwrap();
        let lq = limit_integrals(&ev, &p, 1.0).unwrap();
        assert_eq!((lq.rho_integral, lq.rprime_integral), (0.0, 0.0));

        let p = simulate_path(&ModelSpec::with_vol(VolModel::Linear { a: 1.0, b: 1.0 }), &grid, 1e-4, 1).unwrap();
        let lq = limit_integrals(&ev, &p, 0.0).unwrap();
        assert!((lq.rho_integral - 1.5).abs() < 1e-3);
        assert!((lq.rprime_integral - 14.0 / 3.0).abs() < 1e-2);
    }

    #[test]
    fn studentize_examples() {
        let lq = LimitQuantities {
            rho_integral: 1.0,
            rprime_integral: 3.0,
            m: 1.0,
            method: Method::ClosedForm,
            mc_std_error: None,
            negative_density: None,
        };
        assert_eq!(studentize(1000.0, &lq, 1e-3).unwrap(), 0.0);
        let z = studentize(1001.0, &lq, 1e-3).unwrap();
        assert!((z - 0.018_257_418_583_505_5).abs() < 1e-12, "{z}");
        let flat = LimitQuantities { rprime_integral: 0.0, ..lq };
        assert!(matches!(studentize(1.0, &flat, 1e-3), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn quantiles() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-8);
        assert!((normal_quantile(0.5)).abs() < 1e-12);
        let c = normal_cdf(1.959_963_984_540_054);
        assert!((c - 0.975).abs() < 1e-9, "{c}");
    }

    #[test]
    fn ci_on_three_ticks_and_constant_series() {
        let ticks = Series {
            times: vec![0.0, 0.5, 1.0],
            values: vec![100f64.ln(), 101f64.ln(), 100.5f64.ln()],
        };
        for mode in [MeanDuration::Estimated, MeanDuration::Known(0.5)] {
            let ci = feasible_iv_ci(&ticks, 0.95, mode).unwrap();
            assert!(ci.iv_hat.is_finite());
            assert!(ci.lo <= ci.iv_hat && ci.iv_hat <= ci.hi);
            assert_eq!(ci.m_hat, 0.0);
        }
        let flat = Series {
            times: vec![0.0, 0.5, 1.0, 1.2],
            values: vec![1.0; 4],
        };
        assert!(matches!(
            feasible_iv_ci(&flat, 0.95, MeanDuration::Estimated),
            Err(Error::DegenerateVariance(_))
        ));
        let short = Series {
            times: vec![0.0, 0.5],
            values: vec![0.0, 0.1],
        };
        assert!(matches!(
            feasible_iv_ci(&short, 0.95, MeanDuration::Estimated),
            Err(Error::InsufficientData(_))
        ));
        assert!(feasible_iv_ci(&ticks, 1.0, MeanDuration::Estimated).is_err());
    }

    #[test]
    fn known_duration_width_ratio() {
        // Same Gaussian draws, deterministic vs exponential spacing.
        let n = 20_000;
        let det = gen_sampling_times(&SamplingScheme::deterministic(1.0 / n as f64).unwrap(), 1.0, 0).unwrap();
        let exp = gen_sampling_times(&SamplingScheme::exponential(1.0 / n as f64).unwrap(), 1.0, 17).unwrap();
        let model = ModelSpec::constant(1.0);
        let pd = simulate_path(&model, &det, 1.0, 3).unwrap();
        let pe = simulate_path(&model, &exp, 1.0, 3).unwrap();
        let known = MeanDuration::Known(1.0 / n as f64);
        let wd = feasible_iv_ci(&pd, 0.95, known).unwrap();
        let we = feasible_iv_ci(&pe, 0.95, known).unwrap();
        let ratio = (wd.hi - wd.lo) / (we.hi - we.lo);
        assert!((ratio - (2.0f64 / 3.0).sqrt()).abs() < 0.03, "ratio {ratio}");
    }

    fn random_monomial() -> impl Strategy<Value = (TestFunction, f64, u32)> {
        (1usize..4, -2.0f64..2.0, proptest::collection::vec((0u32..4, any::<bool>(), 0.0f64..3.0), 3), 0.05f64..5.0)
            .prop_map(|(k, c, facs, s2)| {
                let factors: Vec<Factor> = facs[..k]
                    .iter()
                    .map(|&(p, abs, rp)| if abs { Factor::abs(rp) } else { Factor::plain(p) })
                    .collect();
                let degree_odd = factors.iter().filter(|f| f.odd).count() as u32;
                let f = TestFunction::from_monomials(k, vec![Monomial::new(c, factors)]).unwrap();
                (f, s2, degree_odd)
            })
    }

    proptest! {
        #[test]
        fn scaling_and_identities((f, s2, odd) in random_monomial(), m in 0.0f64..3.0) {
            let ev = LimitEvaluator::new(&f).unwrap();
            let d = f.monomials().unwrap()[0].degree();
            let scaled = s2.powf(d / 2.0) * ev.rho(1.0).unwrap();
            let direct = ev.rho(s2).unwrap();
            prop_assert!((scaled - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
            if odd % 2 == 1 {
                prop_assert_eq!(direct, 0.0);
            }
            let rho = ev.rho(s2).unwrap();
            let diff = ev.r_prime(s2, m).unwrap() - ev.r_plain(s2).unwrap();
            prop_assert!((diff - m * rho * rho).abs() <= 1e-12 * (1.0 + (m * rho * rho).abs()));
            if f.k() == 1 {
                let r = ev.r_plain(s2).unwrap();
                prop_assert!(r >= -1e-10 * (1.0 + rho * rho));
            }
        }
    }
}
