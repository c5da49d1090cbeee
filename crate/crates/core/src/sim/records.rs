//! CSV output: aggregated experiment records, per-drop precoding records and
//! complex matrices.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::{CMatrix, Complex64, Error, Result};

/// One aggregated measurement at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub experiment: &'static str,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub btot: u32,
    /// Empty for experiments that do not depend on transmit power.
    pub power_dbm: Option<f64>,
    pub method: String,
    pub metric: &'static str,
    pub mean: f64,
    /// Sample standard deviation over trials divided by `√trials`.
    pub std_err: f64,
    pub trials: usize,
}

/// Sum-SE of one precoder on one drop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropRecord {
    pub drop: usize,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub btot: u32,
    pub power_dbm: f64,
    pub method: &'static str,
    pub reconstruction: &'static str,
    pub true_sum_se: f64,
    pub lb_sum_se: f64,
    /// GPIP/WMMSE iterations; zero for ZF.
    pub iterations: usize,
}

/// Mean and standard error of a sample.
pub fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let t = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / t;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1.0);
    (mean, (var / t).sqrt())
}

/// Writes records with a header row to any writer.
pub fn write_csv<W: Write, T: Serialize>(records: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes records with a header row to `path`.
pub fn emit_csv<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(records, std::io::BufWriter::new(file))
}

/// Row-major complex matrix, one `"re,im"` field per entry, no header.
pub fn write_matrix_csv<W: Write>(m: &CMatrix, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format!("{},{}", m[(i, j)].re, m[(i, j)].im)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_matrix_csv(m: &CMatrix, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_matrix_csv(m, std::io::BufWriter::new(file))
}

/// Inverse of [`write_matrix_csv`].
pub fn read_matrix_csv<R: Read>(input: R) -> Result<CMatrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|cell| {
                let (re, im) = cell
                    .split_once(',')
                    .ok_or_else(|| Error::invalid("matrix cell", format!("expected \"re,im\", got {cell:?}")))?;
                let parse = |s: &str| {
                    s.trim().parse::<f64>().map_err(|_| Error::invalid("matrix cell", format!("bad number {s:?}")))
                };
                Ok(Complex64::new(parse(re)?, parse(im)?))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::LengthMismatch { expected: first.len(), got: row.len() });
            }
        }
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(CMatrix::from_row_iterator(nrows, ncols, rows.into_iter().flatten()))
}
