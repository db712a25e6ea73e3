//! CSV readers and writers for tick files, grids and paths.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::functionals::{Observations, Series};
use crate::pathsim::SimulatedPath;
use crate::sampling::SampleGrid;

/// Observed prices with `x = ln price`.
#[derive(Debug, Clone, PartialEq)]
pub struct TickSeries {
    times: Vec<f64>,
    prices: Vec<f64>,
    x: Vec<f64>,
    /// Rows dropped because a later row had the same timestamp.
    pub duplicates: usize,
}

impl TickSeries {
    pub fn new(times: Vec<f64>, prices: Vec<f64>) -> Result<Self> {
        if times.len() != prices.len() {
            return Err(Error::data("times and prices differ in length"));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::data(format!("times must be strictly increasing: {} then {}", w[0], w[1])));
        }
        if let Some(p) = prices.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::data(format!("prices must be positive, got {p}")));
        }
        let x = prices.iter().map(|p| p.ln()).collect();
        Ok(TickSeries {
            times,
            prices,
            x,
            duplicates: 0,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn log_prices(&self) -> &[f64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

impl Observations for TickSeries {
    fn obs_times(&self) -> &[f64] {
        &self.times
    }

    fn obs_values(&self) -> &[f64] {
        &self.x
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io {
            context: format!("reading {}", path.display()),
            source: match e.into_kind() {
                csv::ErrorKind::Io(io) => io,
                other => std::io::Error::other(format!("{other:?}")),
            },
        })
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads numeric rows whose header starts with `expected`. Extra trailing
/// columns are ignored.
fn read_numeric(path: &Path, expected: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = open(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let got: Vec<&str> = headers.iter().take(expected.len()).collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header starting with `{}`, got `{}`", expected.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < expected.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", expected.len(), rec.len())));
        }
        let mut row = Vec::with_capacity(expected.len());
        for (field, name) in rec.iter().zip(expected) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("{name}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("{name}: `{field}` is not finite")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a `time,price` file. Consecutive rows with the same timestamp
/// collapse to the last one; the number dropped is kept in `duplicates`.
pub fn ingest_ticks(path: &Path) -> Result<TickSeries> {
    let rows = read_numeric(path, &["time", "price"])?;
    let mut times: Vec<f64> = Vec::with_capacity(rows.len());
    let mut prices: Vec<f64> = Vec::with_capacity(rows.len());
    let mut duplicates = 0;
    for row in rows {
        let (t, p) = (row[0], row[1]);
        if p <= 0.0 {
            return Err(Error::data(format!("non-positive price {p} at time {t}")));
        }
        if times.last() == Some(&t) {
            *prices.last_mut().unwrap() = p;
            duplicates += 1;
        } else {
            times.push(t);
            prices.push(p);
        }
    }
    let mut series = TickSeries::new(times, prices)?;
    series.duplicates = duplicates;
    Ok(series)
}

/// Reads a `time,x,sigma2` path file; `sigma2` may be absent.
pub fn read_path_csv(path: &Path) -> Result<Series> {
    let rows = read_numeric(path, &["time", "x"])?;
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::data(format!("times must be strictly increasing: {} then {}", w[0], w[1])));
    }
    Ok(Series {
        times,
        values: rows.iter().map(|r| r[1]).collect(),
    })
}

/// Reads either a path file or a tick file, by header.
pub fn read_observations(path: &Path) -> Result<Series> {
    let mut rdr = open(path)?;
    let first = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .get(1)
        .unwrap_or("")
        .to_string();
    if first == "price" {
        let t = ingest_ticks(path)?;
        Ok(Series {
            times: t.times,
            values: t.x,
        })
    } else {
        read_path_csv(path)
    }
}

// `{:?}` on f64 is the shortest representation that parses back exactly.

pub fn write_grid_csv(grid: &SampleGrid, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "i,t,tau")?;
    let times = grid.times();
    for (i, t) in times.iter().enumerate() {
        let tau = if i == 0 { 0.0 } else { t - times[i - 1] };
        writeln!(out, "{i},{t:?},{tau:?}")?;
    }
    Ok(())
}

pub fn write_path_csv(path: &SimulatedPath, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "time,x,sigma2")?;
    for ((t, x), s2) in path.grid().times().iter().zip(path.sample_x()).zip(path.sample_sigma2()) {
        writeln!(out, "{t:?},{x:?},{s2:?}")?;
    }
    Ok(())
}
