//! Metrics CSV.
//!
//! Header, fixed:
//!
//! ```text
//! round,train_loss,eval_loss,eval_accuracy,ctos_bytes_mean,peak_memory_bytes,coverage_fraction,diverged_clients,wall_ms
//! ```
//!
//! Floats use shortest round-trip formatting, so rows parse back exactly.
//! `wall_ms` is 0 unless the config sets `wall_clock = true`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::csv_io;
use crate::Result;

pub const HEADER: &str =
    "round,train_loss,eval_loss,eval_accuracy,ctos_bytes_mean,peak_memory_bytes,coverage_fraction,diverged_clients,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u32,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub ctos_bytes_mean: f64,
    pub peak_memory_bytes: u64,
    pub coverage_fraction: f64,
    pub diverged_clients: u32,
    pub wall_ms: u64,
}

pub fn write_metrics(mut out: impl std::io::Write, rows: &[MetricsRow]) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_metrics(file, rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_io)?;
    let header = r.headers().map_err(csv_io)?.iter().collect::<Vec<_>>().join(",");
    if header != HEADER {
        return Err(crate::Error::config("metrics header", format!("unexpected `{header}`")));
    }
    r.deserialize().map(|row| row.map_err(csv_io)).collect()
}
