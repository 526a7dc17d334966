//! Physical-validity audit of a Maxwell capacitance matrix.
//!
//! Four conditions are checked independently:
//! (a) symmetry, (b) non-positive off-diagonal entries, (c) diagonal
//! dominance of every row, and (d) mutual capacitance that does not grow
//! with distance. Check (d) assumes conductor indices follow the spatial
//! order of a linear array and is reported on its own.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::system::CapacitanceMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("matrix is not square: {rows} rows, row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("empty matrix")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    /// Allowed `max|C_ij − C_ji| / max|C|`.
    pub sym_tol: f64,
    /// Positive off-diagonal values up to this many F/m (or whatever unit
    /// the matrix is in) are tolerated.
    pub sign_slack: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            sym_tol: 1e-3,
            sign_slack: 0.0,
        }
    }
}

/// One flagged entry, 0-based indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Row whose off-diagonal magnitudes outweigh the diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceViolation {
    pub row: usize,
    pub diagonal: f64,
    pub off_diagonal_sum: f64,
}

/// `|C[row][col]|` exceeds `|C[row][nearer]|`, where `nearer` is the
/// neighbour of `col` one step closer to the diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayViolation {
    pub row: usize,
    pub col: usize,
    pub nearer: usize,
    pub value: f64,
    pub nearer_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalityReport {
    /// `None` when only a single row was audited.
    pub symmetric: Option<bool>,
    pub max_asymmetry: Option<f64>,
    pub off_diagonal_sign_ok: bool,
    pub positive_off_diagonal: Vec<Entry>,
    pub diagonally_dominant: bool,
    pub dominance_violations: Vec<DominanceViolation>,
    pub monotone_decay_ok: bool,
    pub decay_violations: Vec<DecayViolation>,
    pub physical: bool,
}

impl PhysicalityReport {
    /// Human-readable list of violations, 1-based indices.
    pub fn describe(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.symmetric == Some(false) {
            out.push(format!(
                "asymmetric: max |Cij - Cji| / max |C| = {:.3e}",
                self.max_asymmetry.unwrap_or(f64::NAN)
            ));
        }
        for e in &self.positive_off_diagonal {
            out.push(format!(
                "C{},{} = {:.4e} is positive",
                e.row + 1,
                e.col + 1,
                e.value
            ));
        }
        for d in &self.dominance_violations {
            out.push(format!(
                "row {}: off-diagonal sum {:.4e} exceeds diagonal {:.4e}",
                d.row + 1,
                d.off_diagonal_sum,
                d.diagonal
            ));
        }
        for d in &self.decay_violations {
            out.push(format!(
                "|C{},{}| = {:.4e} exceeds nearer |C{},{}| = {:.4e}",
                d.row + 1,
                d.col + 1,
                d.value.abs(),
                d.row + 1,
                d.nearer + 1,
                d.nearer_value.abs()
            ));
        }
        out
    }
}

fn check_rows(rows: &[Vec<f64>], audited: &[usize], opts: &AuditOptions) -> PhysicalityReport {
    let mut positive = Vec::new();
    let mut dominance = Vec::new();
    let mut decay = Vec::new();
    for &i in audited {
        let row = &rows[i];
        let mut off_sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if j == i {
                continue;
            }
            off_sum += v.abs();
            if v > opts.sign_slack {
                positive.push(Entry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        if off_sum.is_nan() || row[i].is_nan() || off_sum > row[i] {
            dominance.push(DominanceViolation {
                row: i,
                diagonal: row[i],
                off_diagonal_sum: off_sum,
            });
        }
        // Walk away from the diagonal on both sides, starting past the first
        // neighbour.
        for j in (i + 2)..row.len() {
            if row[j].abs() > row[j - 1].abs() {
                decay.push(DecayViolation {
                    row: i,
                    col: j,
                    nearer: j - 1,
                    value: row[j],
                    nearer_value: row[j - 1],
                });
            }
        }
        for j in (0..i.saturating_sub(1)).rev() {
            if row[j].abs() > row[j + 1].abs() {
                decay.push(DecayViolation {
                    row: i,
                    col: j,
                    nearer: j + 1,
                    value: row[j],
                    nearer_value: row[j + 1],
                });
            }
        }
    }
    PhysicalityReport {
        symmetric: None,
        max_asymmetry: None,
        off_diagonal_sign_ok: positive.is_empty(),
        positive_off_diagonal: positive,
        diagonally_dominant: dominance.is_empty(),
        dominance_violations: dominance,
        monotone_decay_ok: decay.is_empty(),
        decay_violations: decay,
        physical: false,
    }
}

/// Audit a full square matrix given as rows.
pub fn audit_rows(rows: &[Vec<f64>], opts: &AuditOptions) -> Result<PhysicalityReport, AuditError> {
    let n = rows.len();
    if n == 0 {
        return Err(AuditError::Empty);
    }
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(AuditError::NotSquare {
            rows: n,
            row,
            len: r.len(),
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let mut report = check_rows(rows, &all, opts);
    let scale = rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let asym = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max((rows[i][j] - rows[j][i]).abs()));
    let rel = if scale > 0.0 { asym / scale } else { 0.0 };
    let symmetric = rel <= opts.sym_tol;
    report.symmetric = Some(symmetric);
    report.max_asymmetry = Some(rel);
    report.physical = symmetric
        && report.off_diagonal_sign_ok
        && report.diagonally_dominant
        && report.monotone_decay_ok;
    Ok(report)
}

/// Audit a capacitance matrix.
pub fn audit(c: &CapacitanceMatrix, opts: &AuditOptions) -> PhysicalityReport {
    audit_rows(&c.rows(), opts).expect("capacitance matrices are square and non-empty")
}

/// Audit only the first row (for published data that lists nothing else).
/// Symmetry cannot be judged and is skipped.
pub fn audit_first_row(row: &[f64], opts: &AuditOptions) -> Result<PhysicalityReport, AuditError> {
    if row.is_empty() {
        return Err(AuditError::Empty);
    }
    let mut report = check_rows(&[row.to_vec()], &[0], opts);
    report.physical =
        report.off_diagonal_sign_ok && report.diagonally_dominant && report.monotone_decay_ok;
    Ok(report)
}
