//! Replicated Monte Carlo experiments for the law of large numbers and the
//! central limit theorem of the normalized functional.
//!
//! Every replication draws its grid and its path from seeds derived from
//! `(master_seed, n, rep, stream)`, and results are assembled in
//! replication order, so a report body does not depend on the thread count.

mod report;
mod stats;

pub use report::{write_report_json, write_stats_csv};
pub use stats::{kolmogorov_q, ks_test, ks_test_cdf, rate_fit, KsResult, RateFit, Summary, KS_MIN_SAMPLES};

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::functionals::{normalized_increments, TestFunction};
use crate::gaussianlimits::{limit_integrals_on, studentize, LimitEvaluator};
use crate::pathsim::{simulate_path, ModelSpec, SimulatedPath};
use crate::sampling::{gen_sampling_times, DurationLaw, SamplingScheme};
use crate::seed::{derive, rng_from_seed, Stream};

pub const DEFAULT_CLT_REPLICATIONS: usize = 2000;
pub const DEFAULT_LLN_REPLICATIONS: usize = 200;
pub const DEFAULT_N_GRID: [usize; 5] = [500, 1000, 2000, 4000, 8000];
/// Sub-step length as a fraction of the mean duration.
pub const DEFAULT_MAX_STEP_FRAC: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Lln,
    Clt,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub law: DurationLaw,
    pub model: ModelSpec,
    pub f: TestFunction,
    pub horizon: f64,
    /// Nominal rates; `Δ_n = T / n`.
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    pub mode: Mode,
    pub max_step_frac: f64,
    /// LLN only: when positive, the error is the maximum over this many
    /// equally spaced checkpoints instead of the terminal error.
    pub checkpoints: usize,
    /// CLT only: replace each statistic by an independent N(0, 1) draw.
    pub bypass: bool,
    /// Worker threads; `None` uses the available parallelism. Not part of
    /// the report.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, law: DurationLaw, model: ModelSpec, f: TestFunction) -> Self {
        ExperimentConfig {
            law,
            model,
            f,
            horizon: 1.0,
            n_grid: DEFAULT_N_GRID.to_vec(),
            replications: match mode {
                Mode::Lln => DEFAULT_LLN_REPLICATIONS,
                Mode::Clt => DEFAULT_CLT_REPLICATIONS,
            },
            master_seed: 42,
            mode,
            max_step_frac: DEFAULT_MAX_STEP_FRAC,
            checkpoints: 0,
            bypass: false,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::param("replications must be at least 1"));
        }
        if self.n_grid.is_empty() {
            return Err(Error::param("n_grid must not be empty"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) || self.n_grid[0] == 0 {
            return Err(Error::param("n_grid must be positive and strictly increasing"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::param("horizon must be positive"));
        }
        if !(self.max_step_frac.is_finite() && self.max_step_frac > 0.0) {
            return Err(Error::param("max_step_frac must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::param("threads must be at least 1"));
        }
        SamplingScheme::new(self.law, self.horizon / self.n_grid[0] as f64)?;
        self.model.validate()
    }

    fn echo(&self) -> Value {
        json!({
            "mode": self.mode,
            "scheme": self.law,
            "model": self.model.describe(),
            "f": self.f.to_string(),
            "k": self.f.k(),
            "horizon": self.horizon,
            "n_grid": self.n_grid,
            "replications": self.replications,
            "master_seed": self.master_seed,
            "max_step_frac": self.max_step_frac,
            "checkpoints": self.checkpoints,
            "bypass": self.bypass,
        })
    }
}

/// Outcome of one replication at one rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Replication {
    /// `Δ_n V'(f, k) - ∫ρ du` at the last observation.
    pub error: f64,
    /// `error / √Δ_n`.
    pub scaled_error: f64,
    /// Maximum absolute error over the checkpoints, when requested.
    pub sup_error: Option<f64>,
    pub studentized: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerN {
    pub n: usize,
    pub mean_duration: f64,
    pub m: f64,
    /// Per replication: the error (LLN, or its checkpoint maximum) or the
    /// studentized statistic (CLT).
    pub values: Vec<f64>,
    pub scaled_errors: Vec<f64>,
    pub summary: Summary,
    pub scaled_error_variance: f64,
    pub mean_count: f64,
    pub ks: Option<KsResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: Value,
    pub per_n: Vec<PerN>,
    /// KS result at the largest rate (CLT only).
    pub ks: Option<KsResult>,
    /// Fit of log RMS error on log Δ_n (LLN with at least three rates).
    pub rate_fit: Option<RateFit>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl ExperimentReport {
    pub fn per_n(&self, n: usize) -> Option<&PerN> {
        self.per_n.iter().find(|p| p.n == n)
    }
}

/// Simulates one `(grid, path)` pair exactly as the harness does.
pub fn simulate_replication(config: &ExperimentConfig, n: usize, rep: usize) -> Result<SimulatedPath> {
    let delta = config.horizon / n as f64;
    let scheme = SamplingScheme::new(config.law, delta)?;
    let grid_seed = derive(config.master_seed, n as u64, rep as u64, Stream::Grid);
    let path_seed = derive(config.master_seed, n as u64, rep as u64, Stream::Path);
    let grid = gen_sampling_times(&scheme, config.horizon, grid_seed)?;
    simulate_path(&config.model, &grid, delta * config.max_step_frac, path_seed)
}

struct RepContext<'a> {
    config: &'a ExperimentConfig,
    eval: &'a LimitEvaluator<'a>,
    n: usize,
    delta: f64,
    m: f64,
}

impl RepContext<'_> {
    fn run(&self, rep: usize) -> Result<(Replication, Option<f64>)> {
        let cfg = self.config;
        if cfg.bypass {
            let seed = derive(cfg.master_seed, self.n as u64, rep as u64, Stream::MonteCarlo);
            let z: f64 = rng_from_seed(seed).sample(StandardNormal);
            let r = Replication {
                error: z,
                scaled_error: z,
                sup_error: None,
                studentized: Some(z),
                count: 0,
            };
            return Ok((r, None));
        }

        let path = simulate_replication(cfg, self.n, rep)?;
        let y = normalized_increments(&path)?;
        let k = cfg.f.k();
        let terms: Vec<f64> = if y.len() >= k {
            y.windows(k).map(|w| cfg.f.eval_unchecked(w)).collect()
        } else {
            Vec::new()
        };
        let v_prime: f64 = terms.iter().sum();
        let lq = limit_integrals_on(self.eval, path.fine_times(), path.fine_sigma2(), self.m)?;
        let error = self.delta * v_prime - lq.rho_integral;

        let sup_error = if cfg.mode == Mode::Lln && cfg.checkpoints > 0 {
            Some(self.checkpoint_sup(&path, &terms)?)
        } else {
            None
        };
        let studentized = match cfg.mode {
            Mode::Clt => Some(studentize(v_prime, &lq, self.delta)?),
            Mode::Lln => None,
        };
        Ok((
            Replication {
                error,
                scaled_error: error / self.delta.sqrt(),
                sup_error,
                studentized,
                count: path.grid().count(),
            },
            lq.negative_density,
        ))
    }

    /// `max_j |Δ_n V'(f,k)_{t_j} - ∫_0^{t_j} ρ du|` over equally spaced `t_j`,
    /// each read at the last observation not after `t_j`.
    fn checkpoint_sup(&self, path: &SimulatedPath, terms: &[f64]) -> Result<f64> {
        let times = path.grid().times();
        let k = self.config.f.k();
        let c = self.config.checkpoints;
        let mut worst = 0.0f64;
        for j in 1..=c {
            let t = self.config.horizon * j as f64 / c as f64;
            let last_obs = times.partition_point(|&s| s <= t) - 1;
            // Window i uses observations i..=i+k.
            let used = (last_obs + 1).saturating_sub(k);
            let partial: f64 = terms[..used.min(terms.len())].iter().sum();
            let t_obs = times[last_obs];
            let fine_end = path.fine_times().partition_point(|&s| s < t_obs);
            let lq = limit_integrals_on(
                self.eval,
                &path.fine_times()[..=fine_end],
                &path.fine_sigma2()[..=fine_end],
                self.m,
            )?;
            worst = worst.max((self.delta * partial - lq.rho_integral).abs());
        }
        Ok(worst)
    }
}

fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    if config.mode == Mode::Clt && !config.f.satisfies_clt_symmetry() {
        warnings.push(format!(
            "f = {} is neither a globally even polynomial nor even in each argument; the CLT hypotheses do not hold",
            config.f
        ));
    }

    let eval = LimitEvaluator::new(&config.f)?;
    let m = SamplingScheme::new(config.law, 1.0)?.analytic_m();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;

    let mut per_n = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let ctx = RepContext {
            config,
            eval: &eval,
            n,
            delta: config.horizon / n as f64,
            m,
        };
        let results: Vec<(Replication, Option<f64>)> = pool.install(|| {
            (0..config.replications)
                .into_par_iter()
                .map(|rep| {
                    ctx.run(rep).map_err(|e| Error::Replication {
                        n,
                        rep,
                        seed: derive(config.master_seed, n as u64, rep as u64, Stream::Path),
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;

        if let Some(worst) = results.iter().filter_map(|r| r.1).reduce(f64::min) {
            warnings.push(format!("n = {n}: R' density reached {worst:e} on some paths"));
        }
        let reps: Vec<Replication> = results.into_iter().map(|r| r.0).collect();
        let values: Vec<f64> = reps
            .iter()
            .map(|r| match config.mode {
                Mode::Clt => r.studentized.expect("set in CLT mode"),
                Mode::Lln => r.sup_error.unwrap_or(r.error),
            })
            .collect();
        let scaled_errors: Vec<f64> = reps.iter().map(|r| r.scaled_error).collect();
        let ks = match config.mode {
            Mode::Clt if values.len() >= KS_MIN_SAMPLES => Some(ks_test(&values)?),
            _ => None,
        };
        per_n.push(PerN {
            n,
            mean_duration: ctx.delta,
            m,
            summary: Summary::of(&values),
            scaled_error_variance: Summary::of(&scaled_errors).variance,
            mean_count: reps.iter().map(|r| r.count as f64).sum::<f64>() / reps.len() as f64,
            values,
            scaled_errors,
            ks,
        });
    }

    let ks = match config.mode {
        Mode::Clt => per_n.last().and_then(|p| p.ks),
        Mode::Lln => None,
    };
    let rate_fit = match config.mode {
        Mode::Lln if per_n.len() >= 3 => {
            let pairs: Vec<(f64, f64)> = per_n.iter().map(|p| (p.mean_duration, p.summary.rms)).collect();
            match stats::rate_fit(&pairs) {
                Ok(fit) => Some(fit),
                Err(e) => {
                    warnings.push(format!("rate fit skipped: {e}"));
                    None
                }
            }
        }
        _ => None,
    };

    Ok(ExperimentReport {
        config: config.echo(),
        per_n,
        ks,
        rate_fit,
        warnings,
        elapsed: start.elapsed(),
    })
}

/// Law-of-large-numbers experiment: RMS of `Δ_n V' - ∫ρ du` per rate and
/// its log-log decay rate.
pub fn run_lln(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.mode != Mode::Lln {
        return Err(Error::param("run_lln needs mode = lln"));
    }
    run(config)
}

/// CLT experiment: studentized statistics with the realized volatility path
/// and the analytic `M`, tested against N(0, 1).
pub fn run_clt(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.mode != Mode::Clt {
        return Err(Error::param("run_clt needs mode = clt"));
    }
    run(config)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::parse_test_function;

    fn cfg(mode: Mode, sigma: f64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            mode,
            DurationLaw::Exponential,
            ModelSpec::constant(sigma),
            parse_test_function("x^2").unwrap(),
        );
        c.n_grid = vec![200, 400, 800];
        c.replications = 50;
        c
    }

    #[test]
    fn zero_vol_gives_zero_errors() {
        let r = run_lln(&cfg(Mode::Lln, 0.0)).unwrap();
        for p in &r.per_n {
            assert!(p.values.iter().all(|&e| e == 0.0));
            assert_eq!(p.values.len(), 50);
        }
        assert!(r.rate_fit.is_none());
        assert!(r.warnings.iter().any(|w| w.contains("rate fit skipped")));
    }

    #[test]
    fn mode_mismatch_and_validation() {
        assert!(run_clt(&cfg(Mode::Lln, 1.0)).is_err());
        let mut c = cfg(Mode::Lln, 1.0);
        c.n_grid = vec![400, 200];
        assert!(matches!(run_lln(&c), Err(Error::Parameter(_))));
        c.n_grid = vec![];
        assert!(run_lln(&c).is_err());
        let mut c = cfg(Mode::Lln, 1.0);
        c.replications = 0;
        assert!(run_lln(&c).is_err());
    }

    #[test]
    fn clt_degenerate_variance_reports_context() {
        let err = run_clt(&cfg(Mode::Clt, 0.0)).unwrap_err();
        match err {
            Error::Replication { n, source, .. } => {
                assert_eq!(n, 200);
                assert!(matches!(*source, Error::DegenerateVariance(_)));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn odd_function_warns() {
        let mut c = cfg(Mode::Clt, 1.0);
        c.f = parse_test_function("x^3 + x^2").unwrap();
        c.n_grid = vec![200];
        let r = run_clt(&c).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("CLT hypotheses")));
    }

    #[test]
    fn checkpoint_sup_dominates_terminal_error() {
        let mut c = cfg(Mode::Lln, 1.0);
        c.checkpoints = 10;
        c.n_grid = vec![500];
        let sup = run_lln(&c).unwrap();
        c.checkpoints = 0;
        let term = run_lln(&c).unwrap();
        for (s, t) in sup.per_n[0].values.iter().zip(&term.per_n[0].values) {
            // The last checkpoint is T itself.
            assert!(*s >= t.abs() - 1e-15);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut c = cfg(Mode::Clt, 1.0);
        c.threads = Some(1);
        let a = serde_json::to_string(&run_clt(&c).unwrap()).unwrap();
        c.threads = Some(4);
        let b = serde_json::to_string(&run_clt(&c).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
