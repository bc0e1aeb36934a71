//! CSV and JSON helpers for matrices and reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::{FourierBasis, FourierCoefficients};
use crate::periodic_system::GainSchedule;

/// Writes a matrix as headerless CSV, one matrix row per line.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("{}: bad number {s:?}: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "{}: rows have differing lengths",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Loads a gain written as coefficient CSV: `m·n` rows (components of
/// `vec(K)`), `2N + 1` columns.
pub fn read_gain_schedule(path: &Path, m: usize, n: usize, period: f64) -> Result<GainSchedule> {
    let c = read_matrix_csv(path)?;
    if c.nrows() != m * n || c.ncols() % 2 == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}: {}×{} coefficients do not describe a {m}×{n} gain",
            path.display(),
            c.nrows(),
            c.ncols()
        )));
    }
    let basis = FourierBasis::from_period((c.ncols() - 1) / 2, period)?;
    GainSchedule::new(FourierCoefficients::new(c, basis)?, m, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn matrix_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = dmatrix![1.0, -2.5e-17, std::f64::consts::PI; 0.1, 3.0e200, -0.0];
        write_matrix_csv(&path, &m).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), m);
    }

    #[test]
    fn gain_schedule_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        let basis = FourierBasis::from_period(1, 2.0).unwrap();
        let c = DMatrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64 * 0.3);
        let g = GainSchedule::new(FourierCoefficients::new(c.clone(), basis).unwrap(), 1, 2).unwrap();
        write_matrix_csv(&path, g.coeffs().coeffs()).unwrap();
        let back = read_gain_schedule(&path, 1, 2, 2.0).unwrap();
        assert_eq!(back, g);
        assert!(read_gain_schedule(&path, 2, 2, 2.0).is_err());
    }
}
