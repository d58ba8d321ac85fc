//! Gradient matrix files and a minimal CSV reader for emitted tables.

use std::io::Write;
use std::path::Path;

use sketchogd::linalg::DenseMatrix;

use crate::error::{BenchError, Result};

/// Binary matrix layout: magic `SOGDMAT1`, `u64` rows, `u64` cols, then
/// row-major little-endian `f64`. Gradient dumps store one gradient per row.
pub const MATRIX_MAGIC: &[u8; 8] = b"SOGDMAT1";

pub fn encode_matrix(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.data().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < 24 || &bytes[..8] != MATRIX_MAGIC {
        return Err(BenchError::Data("not a matrix file: bad magic or header at byte offset 0".into()));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let need = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).and_then(|n| n.checked_add(24));
    if need != Some(bytes.len()) {
        return Err(BenchError::Data(format!(
            "matrix file truncated: header says {rows}x{cols}, payload ends at byte offset {}",
            bytes.len()
        )));
    }
    let data = bytes[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(DenseMatrix::new(rows, cols, data)?)
}

/// One row of numbers per line, comma separated.
pub fn parse_numeric_csv(text: &str) -> Result<DenseMatrix> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| BenchError::Data(format!("line {}: cannot parse `{s}`", n + 1))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    let width = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(BenchError::Data(format!("row {} has {} values, expected {width}", i + 1, rows[i].len())));
    }
    Ok(DenseMatrix::from_rows(&rows)?)
}

/// Gradient matrix (one gradient per row) from a binary dump or a CSV file.
pub fn load_gradient_matrix(path: &Path) -> Result<DenseMatrix> {
    let bytes = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
    if bytes.starts_with(MATRIX_MAGIC) {
        decode_matrix(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| BenchError::Data(format!("{} is neither a matrix dump nor text", path.display())))?;
        parse_numeric_csv(&text)
    }
}

/// A parsed CSV table: header plus string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Reads a headered CSV without quoting. Rows may be shorter than the header
/// (used for footer lines).
pub fn read_table(text: &str) -> Result<Table> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| BenchError::Data("empty CSV".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines.map(|l| l.split(',').map(|s| s.trim().to_string()).collect()).collect();
    Ok(Table { header, rows })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
    f.write_all(bytes).map_err(|e| BenchError::io(path, e))
}
