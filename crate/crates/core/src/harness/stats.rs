//! Goodness-of-fit and summary statistics for replication outputs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussianlimits::normal_cdf;

pub const KS_MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub samples: usize,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} e^{-2j²λ²}`.
///
/// Returns 1 when the alternating series has not settled after 100 terms,
/// which only happens for tiny `λ` where `Q` is 1 to working precision.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    let a2 = -2.0 * lambda * lambda;
    let mut sign = 2.0;
    let mut sum = 0.0;
    let mut prev = 0.0f64;
    for j in 1..=100 {
        let jf = j as f64;
        let term = sign * (a2 * jf * jf).exp();
        sum += term;
        if term.abs() <= 1e-10 * prev || term.abs() <= 1e-10 * sum.abs() {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
        prev = term.abs();
    }
    1.0
}

/// One-sample KS test of `samples` against a continuous CDF.
pub fn ks_test_cdf<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    let m = samples.len();
    if m < KS_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "KS test needs at least {KS_MIN_SAMPLES} samples, got {m}"
        )));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::data("KS test sample contains NaN"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mf = m as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / mf).max((i + 1) as f64 / mf - c)
        })
        .fold(0.0f64, f64::max);
    let sq = mf.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
        samples: m,
    })
}

/// KS test against the standard normal.
pub fn ks_test(samples: &[f64]) -> Result<KsResult> {
    ks_test_cdf(samples, normal_cdf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares of `ln(error)` on `ln(Δ_n)`.
pub fn rate_fit(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::param(format!("rate fit needs at least 3 points, got {}", pairs.len())));
    }
    if let Some(&(h, e)) = pairs.iter().find(|(h, e)| !(*h > 0.0 && *e > 0.0)) {
        return Err(Error::param(format!("rate fit needs positive inputs, got ({h}, {e})")));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(h, e)| (h.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(Error::param("rate fit design is singular: all Δ_n are equal"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub skewness: f64,
    /// Non-excess kurtosis (3 for a Gaussian).
    pub kurtosis: f64,
    /// Root mean square around zero.
    pub rms: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Summary {
                mean: f64::NAN,
                variance: f64::NAN,
                skewness: f64::NAN,
                kurtosis: f64::NAN,
                rms: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &x in xs {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        let (m2n, m3n, m4n) = (m2 / n, m3 / n, m4 / n);
        Summary {
            mean,
            variance: if xs.len() > 1 { m2 / (n - 1.0) } else { 0.0 },
            skewness: if m2n > 0.0 { m3n / m2n.powf(1.5) } else { 0.0 },
            kurtosis: if m2n > 0.0 { m4n / (m2n * m2n) } else { 0.0 },
            rms: (xs.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
        }
    }
}
