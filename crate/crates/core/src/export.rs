//! CSV writers for gain matrices, solver traces and band matrices.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gain_solvers::SolverTrace;
use crate::shaping::GainMatrix;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn write_rows<'a>(
    path: &Path,
    prefix: &str,
    width: usize,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["frame".to_string()];
    header.extend((1..=width).map(|b| format!("{prefix}{b}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (n, row) in rows.enumerate() {
        let mut rec = vec![n.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per frame: `frame,g1..g24`.
pub fn write_gains_csv(path: &Path, gains: &GainMatrix) -> Result<()> {
    write_rows(path, "g", crate::shaping::NUM_GAIN_BANDS, gains.rows())
}

/// One row per frame: `frame,b1..b26`.
pub fn write_band_csv<'a>(path: &Path, rows: impl Iterator<Item = &'a [f64]>) -> Result<()> {
    write_rows(path, "b", crate::bark::NUM_BANDS, rows)
}

/// `iteration,l0,l_power,lambda,total,max_change`.
pub fn write_trace_csv(path: &Path, trace: &SolverTrace) -> Result<()> {
    let mut w = writer(path)?;
    for row in &trace.rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
