use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::ExperimentReport;
use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        context: format!("writing {}", path.display()),
        source,
    }
}

/// Writes the report as pretty JSON with the top-level keys `config`,
/// `per_n`, `ks`, `rate_fit` and `warnings`.
pub fn write_report_json(report: &ExperimentReport, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::Internal(format!("serializing report: {e}")))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// One row per replication: `n,rep,value`.
pub fn write_stats_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "n,rep,value").map_err(io_err(path))?;
    for p in &report.per_n {
        for (rep, v) in p.values.iter().enumerate() {
            writeln!(w, "{},{},{:?}", p.n, rep, v).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}
