//! File formats: capacitance CSV in pF/m, JSON reports, timing tables and
//! binary PBM mask portraits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::system::{CapacitanceMatrix, ChangeMask};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: line {line}: {message}")]
    Csv {
        origin: String,
        line: u64,
        message: String,
    },
    #[error("{origin}: no numeric rows")]
    EmptyCsv { origin: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Format with six significant digits in scientific notation.
pub fn sig6(v: f64) -> String {
    format!("{v:.5e}")
}

/// Row-major matrix in pF/m, one row per line, no header.
pub fn matrix_csv(c: &CapacitanceMatrix) -> String {
    let mut out = String::new();
    for i in 0..c.size {
        let row: Vec<String> = c.row(i).iter().map(|v| sig6(v * 1e12)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parse numeric CSV rows. Blank lines and lines starting with `#` are
/// skipped; rows may differ in length.
pub fn parse_rows(text: &str, origin: &str) -> Result<Vec<Vec<f64>>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IoError::Csv {
            origin: origin.to_string(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|_| IoError::Csv {
                    origin: origin.to_string(),
                    line,
                    message: format!("column {}: '{field}' is not a number", col + 1),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::EmptyCsv {
            origin: origin.to_string(),
        });
    }
    Ok(rows)
}

pub fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_rows(&text, &path.display().to_string())
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|source| IoError::File {
                path: dir.to_path_buf(),
                source,
            })?;
        }
    }
    fs::write(path, bytes).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn json_string<T: Serialize>(value: &T) -> Result<String, IoError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_file(path, json_string(value)?)
}

/// Binary PBM: one pixel per entry, row-major, black (1) = changed.
pub fn mask_pbm(mask: &ChangeMask) -> Vec<u8> {
    let n = mask.n();
    let mut out = format!("P4\n# changed entries are black\n{n} {n}\n").into_bytes();
    let bytes_per_row = n.div_ceil(8);
    for row in 0..n {
        let mut packed = vec![0u8; bytes_per_row];
        for col in 0..n {
            if mask.get(row, col) {
                packed[col / 8] |= 0x80 >> (col % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    out
}

/// One line of a sweep timing table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    /// Conductor count or swept parameter name.
    pub label: String,
    pub t_mid_1: Option<f64>,
    pub t_tot_1: Option<f64>,
    pub t_mid_2: Option<f64>,
    pub t_tot_2: Option<f64>,
    pub savings_percent: Option<f64>,
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
    let mut out = String::from("case,t_mid_I_s,t_tot_I_s,t_mid_II_s,t_tot_II_s,savings_percent\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.label,
            cell(r.t_mid_1),
            cell(r.t_tot_1),
            cell(r.t_mid_2),
            cell(r.t_tot_2),
            r.savings_percent
                .map_or(String::new(), |v| format!("{v:.2}"))
        );
    }
    out
}
