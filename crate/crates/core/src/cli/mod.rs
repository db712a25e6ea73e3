//! Command-line front end. `dispatch` parses arguments, runs one
//! subcommand and maps the outcome to an exit code.

mod ticks;

pub use ticks::{
    ingest_ticks, read_observations, read_path_csv, write_grid_csv, write_path_csv, TickSeries,
};

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::functionals::{b_variation, parse_test_function, v_functional, v_prime_functional};
use crate::gaussianlimits::{feasible_iv_ci, MeanDuration};
use crate::harness::{run_experiment, write_report_json, write_stats_csv, ExperimentConfig, Mode};
use crate::pathsim::{simulate_path, Drift, ModelSpec, VolJumps, VolModel};
use crate::sampling::{check_regularity, gen_sampling_times, DurationLaw, DurationStats, SamplingScheme};
use crate::seed::{derive, Stream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "rsclt", version, about = "Functionals of increments under random sampling: simulation, limits and experiments")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw one sampling grid and write `i,t,tau`.
    SampleTimes(SampleTimesArgs),
    /// Simulate one path and write `time,x,sigma2` at the sampling times.
    Simulate(SimulateArgs),
    /// Evaluate V, V' or B on a path or tick file.
    Functional(FunctionalArgs),
    /// Law-of-large-numbers experiment.
    Lln(ExperimentArgs),
    /// Central limit experiment.
    Clt(ExperimentArgs),
    /// Confidence interval for integrated variance from a tick file.
    Ci(CiArgs),
    /// Duration statistics and regularity diagnostics for a tick file.
    Check(CheckArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SchemeKind {
    Deterministic,
    Exponential,
    Gamma,
    Uniform,
}

#[derive(Args, Debug)]
struct SchemeArgs {
    #[arg(long, value_enum, default_value = "exponential")]
    scheme: SchemeKind,
    /// Gamma shape parameter.
    #[arg(long, default_value_t = 2.0)]
    shape: f64,
    /// Uniform half-width as a fraction of the mean duration.
    #[arg(long, default_value_t = 0.5)]
    half_width: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
}

impl SchemeArgs {
    fn law(&self) -> DurationLaw {
        match self.scheme {
            SchemeKind::Deterministic => DurationLaw::Deterministic,
            SchemeKind::Exponential => DurationLaw::Exponential,
            SchemeKind::Gamma => DurationLaw::Gamma { shape: self.shape },
            SchemeKind::Uniform => DurationLaw::Uniform {
                half_width_frac: self.half_width,
            },
        }
    }
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// `const:S`, `linear:A,B`, `cir:KAPPA,THETA,XI,V0` or `lnou:KAPPA,THETA,XI,SIGMA0`.
    #[arg(long, default_value = "const:1")]
    sigma: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    drift: f64,
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    leverage: f64,
    /// Variance jumps `INTENSITY,LOG_MEAN,LOG_SD`.
    #[arg(long, allow_negative_numbers = true)]
    jumps: Option<String>,
    #[arg(long)]
    allow_feller_violation: bool,
}

fn numbers(s: &str, what: &str, count: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::param(format!("{what}: cannot parse `{s}` as numbers")))?;
    if v.len() != count {
        return Err(Error::param(format!("{what}: expected {count} values, got {}", v.len())));
    }
    Ok(v)
}

impl ModelArgs {
    fn model(&self) -> Result<ModelSpec> {
        let (kind, rest) = self
            .sigma
            .split_once(':')
            .ok_or_else(|| Error::param(format!("--sigma: expected KIND:PARAMS, got `{}`", self.sigma)))?;
        let vol = match kind {
            "const" => VolModel::Constant {
                sigma: numbers(rest, "--sigma const", 1)?[0],
            },
            "linear" => {
                let p = numbers(rest, "--sigma linear", 2)?;
                VolModel::Linear { a: p[0], b: p[1] }
            }
            "cir" => {
                let p = numbers(rest, "--sigma cir", 4)?;
                VolModel::Cir {
                    kappa: p[0],
                    theta: p[1],
                    xi: p[2],
                    v0: p[3],
                    allow_feller_violation: self.allow_feller_violation,
                }
            }
            "lnou" => {
                let p = numbers(rest, "--sigma lnou", 4)?;
                VolModel::LogOu {
                    kappa: p[0],
                    theta: p[1],
                    xi: p[2],
                    sigma0: p[3],
                }
            }
            other => return Err(Error::param(format!("--sigma: unknown model `{other}`"))),
        };
        let vol_jumps = match &self.jumps {
            Some(s) => {
                let p = numbers(s, "--jumps", 3)?;
                Some(VolJumps {
                    intensity: p[0],
                    log_mean: p[1],
                    log_sd: p[2],
                })
            }
            None => None,
        };
        let model = ModelSpec {
            x0: self.x0,
            drift: Drift::Constant(self.drift),
            vol,
            leverage: self.leverage,
            vol_jumps,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Args, Debug)]
struct SampleTimesArgs {
    #[command(flatten)]
    scheme: SchemeArgs,
    /// Nominal rate; the mean duration is `horizon / n`.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Euler sub-step as a fraction of the mean duration.
    #[arg(long, default_value_t = crate::harness::DEFAULT_MAX_STEP_FRAC)]
    max_step_frac: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FunctionalKind {
    V,
    Vprime,
    B,
}

#[derive(Args, Debug)]
struct FunctionalArgs {
    /// Test function, e.g. `x^2`, `x1^2*x2^2`, `|x|^1.5`.
    #[arg(long, default_value = "x^2")]
    f: String,
    /// A `time,x,...` path file or a `time,price` tick file.
    #[arg(long, conflicts_with = "ticks", required_unless_present = "ticks")]
    path: Option<PathBuf>,
    #[arg(long)]
    ticks: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "vprime")]
    kind: FunctionalKind,
    /// Exponent for `--kind b`.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "x^2")]
    f: String,
    /// Comma-separated nominal rates.
    #[arg(long, alias = "n-grid")]
    n: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = crate::harness::DEFAULT_MAX_STEP_FRAC)]
    max_step_frac: f64,
    /// LLN: take the maximum error over this many checkpoints.
    #[arg(long, default_value_t = 0)]
    checkpoints: usize,
    /// CLT: replace each statistic by an exact N(0, 1) draw.
    #[arg(long)]
    bypass: bool,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    #[arg(long, default_value = "stats.csv")]
    stats: PathBuf,
}

#[derive(Args, Debug)]
struct CiArgs {
    #[arg(long)]
    ticks: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Use this mean duration instead of the sample mean.
    #[arg(long)]
    mean_duration: Option<f64>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    ticks: PathBuf,
    /// Nominal rate; defaults to the number of durations.
    #[arg(long)]
    n: Option<f64>,
}

/// Decimal with 12 significant digits, scientific outside `[1e-5, 1e12)`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let e = x.abs().log10().floor() as i32;
    if (-5..12).contains(&e) {
        let s = format!("{:.*}", (11 - e).max(0) as usize, x);
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        // Rounding can carry into a thirteenth digit, e.g. 9.9999999999996.
        let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
        if digits.trim_start_matches('0').len() <= 12 {
            return s;
        }
    }
    format!("{x:.11e}")
}

/// Turns a `key = value` file into flags placed right after the subcommand,
/// so flags given on the command line take precedence.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(argv.len());
    let mut config: Option<String> = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(it.next().ok_or_else(|| Error::param("--config needs a file"))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else {
            out.push(a);
        }
    }
    let Some(file) = config else { return Ok(out) };
    let text = fs::read_to_string(&file).map_err(|source| Error::Io {
        context: format!("reading {file}"),
        source,
    })?;
    let mut extra = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: PathBuf::from(&file),
            line: i as u64 + 1,
            message: "expected key=value".into(),
        })?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        match v {
            "true" => extra.push(format!("--{k}")),
            "false" => {}
            _ => extra.push(format!("--{k}={v}")),
        }
    }
    let pos = out
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map_or(out.len(), |p| p + 2);
    out.splice(pos..pos, extra);
    Ok(out)
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>> {
    fs::File::create(path).map(io::BufWriter::new).map_err(|source| Error::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

fn write_out<F>(out: Option<&Path>, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let ctx = |p: &str| {
        let p = p.to_string();
        move |source| Error::Io { context: p, source }
    };
    match out {
        Some(p) => {
            let mut w = create(p)?;
            body(&mut w).and_then(|_| w.flush()).map_err(ctx(&format!("writing {}", p.display())))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w).and_then(|_| w.flush()).map_err(ctx("writing standard output"))
        }
    }
}

fn rate_scheme(s: &SchemeArgs, n: usize) -> Result<SamplingScheme> {
    if n == 0 {
        return Err(Error::param("n must be positive"));
    }
    SamplingScheme::new(s.law(), s.horizon / n as f64)
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::SampleTimes(a) => {
            let scheme = rate_scheme(&a.scheme, a.n)?;
            let grid = gen_sampling_times(&scheme, a.scheme.horizon, derive(a.seed, a.n as u64, 0, Stream::Grid))?;
            write_out(a.out.as_deref(), |w| write_grid_csv(&grid, w))
        }
        Command::Simulate(a) => {
            let scheme = rate_scheme(&a.scheme, a.n)?;
            let model = a.model.model()?;
            let grid = gen_sampling_times(&scheme, a.scheme.horizon, derive(a.seed, a.n as u64, 0, Stream::Grid))?;
            let max_step = scheme.mean_duration * a.max_step_frac;
            let path = simulate_path(&model, &grid, max_step, derive(a.seed, a.n as u64, 0, Stream::Path))?;
            write_out(a.out.as_deref(), |w| write_path_csv(&path, w))
        }
        Command::Functional(a) => {
            let obs = match (&a.path, &a.ticks) {
                (Some(p), _) => read_observations(p)?,
                (None, Some(t)) => {
                    let t = ingest_ticks(t)?;
                    warn_duplicates(&t);
                    crate::functionals::Series {
                        times: t.times().to_vec(),
                        values: t.log_prices().to_vec(),
                    }
                }
                (None, None) => return Err(Error::param("one of --path or --ticks is required")),
            };
            let r = match a.kind {
                FunctionalKind::V => v_functional(&parse_test_function(&a.f)?, &obs)?,
                FunctionalKind::Vprime => v_prime_functional(&parse_test_function(&a.f)?, &obs)?,
                FunctionalKind::B => b_variation(a.p, &obs)?,
            };
            println!("value {}", fmt_num(r.value));
            println!("terms {}", r.terms_used);
            Ok(())
        }
        Command::Lln(a) => experiment(Mode::Lln, a),
        Command::Clt(a) => experiment(Mode::Clt, a),
        Command::Ci(a) => {
            let t = ingest_ticks(&a.ticks)?;
            warn_duplicates(&t);
            let mode = match a.mean_duration {
                Some(d) => MeanDuration::Known(d),
                None => MeanDuration::Estimated,
            };
            let ci = feasible_iv_ci(&t, a.confidence, mode)?;
            println!("iv_hat {}", fmt_num(ci.iv_hat));
            println!("lo {}", fmt_num(ci.lo));
            println!("hi {}", fmt_num(ci.hi));
            println!("delta_hat {}", fmt_num(ci.mean_duration));
            println!("m_hat {}", fmt_num(ci.m_hat));
            Ok(())
        }
        Command::Check(a) => {
            let t = ingest_ticks(&a.ticks)?;
            warn_duplicates(&t);
            let durations: Vec<f64> = t.times().windows(2).map(|w| w[1] - w[0]).collect();
            let stats = DurationStats::from_durations(&durations)?;
            let span = t.times()[t.len() - 1] - t.times()[0];
            let n = a.n.unwrap_or(durations.len() as f64);
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::param("--n must be positive"));
            }
            // Rescale so the observation span has unit length.
            let scaled: Vec<f64> = durations.iter().map(|d| d / span).collect();
            let reg = check_regularity(&scaled, n);
            println!("ticks {}", t.len());
            println!("duplicates {}", t.duplicates);
            println!("span {}", fmt_num(span));
            println!("delta_hat {}", fmt_num(stats.mean_duration));
            println!("m_hat {}", fmt_num(stats.m_hat));
            println!("sum_sq_scaled {}", fmt_num(reg.sum_sq_scaled));
            println!("count_ratio {}", fmt_num(reg.count_ratio));
            Ok(())
        }
    }
}

fn warn_duplicates(t: &TickSeries) {
    if t.duplicates > 0 {
        eprintln!("warning: collapsed {} duplicate timestamps", t.duplicates);
    }
}

fn experiment(mode: Mode, a: ExperimentArgs) -> Result<()> {
    let f = parse_test_function(&a.f)?;
    let model = a.model.model()?;
    let mut cfg = ExperimentConfig::new(mode, a.scheme.law(), model, f);
    cfg.horizon = a.scheme.horizon;
    if let Some(n) = &a.n {
        cfg.n_grid = n
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::param(format!("--n: cannot parse `{n}`")))?;
    }
    if let Some(r) = a.reps {
        cfg.replications = r;
    }
    cfg.master_seed = a.seed;
    cfg.threads = a.threads;
    cfg.max_step_frac = a.max_step_frac;
    cfg.checkpoints = a.checkpoints;
    cfg.bypass = a.bypass;

    let report = run_experiment(&cfg)?;
    write_report_json(&report, &a.out)?;
    write_stats_csv(&report, &a.stats)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "elapsed {:.3}s on {} threads",
        report.elapsed.as_secs_f64(),
        a.threads.unwrap_or_else(rayon::current_num_threads)
    );
    for p in &report.per_n {
        print!("n {} mean {} rms {}", p.n, fmt_num(p.summary.mean), fmt_num(p.summary.rms));
        if let Some(ks) = p.ks {
            print!(" ks_stat {} ks_p {}", fmt_num(ks.statistic), fmt_num(ks.p_value));
        }
        println!();
    }
    if let Some(fit) = report.rate_fit {
        println!("rate_slope {}", fmt_num(fit.slope));
    }
    Ok(())
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code: 0 on success, 1 on usage, parameter or data errors, 2 otherwise.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    match run_command(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_user_error() {
        EXIT_USER
    } else {
        EXIT_INTERNAL
    }
}
