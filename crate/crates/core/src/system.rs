//! Dense moment-method system: assembly, solution and capacitance extraction.
//!
//! Rows and columns are indexed by mesh segment order. A row tests either
//! the potential condition (conductor segments) or the normal-field
//! condition (dielectric interfaces) at the segment midpoint; a column is
//! the unit-density charge on one segment.
//!
//! The 2D logarithmic potential is only defined up to a constant. The solve
//! therefore carries one extra unknown per excitation, the constant shared
//! by every conductor row, pinned by requiring zero net charge. This makes
//! the extracted capacitances independent of the length unit.

use std::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundaryKind, Mesh, Segment};
use crate::kernel::{log_potential_integral, normal_field_integral};

/// Vacuum permittivity, F/m.
pub const EPS0: f64 = 8.8541878128e-12;

const INV_2PI_EPS0: f64 = 1.0 / (2.0 * PI * EPS0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("system matrix is singular or nearly so (pivot ratio {pivot_ratio:e}, condition estimate {condition:e}); check for degenerate geometry")]
    Singular { pivot_ratio: f64, condition: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("zero total influence of conductor rows; the structure has no conductors")]
    NoConductorRows,
}

/// Dense `N x N` influence matrix, stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SystemMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.n + row]
    }

    pub fn as_faer(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.n, self.n)
    }

    /// Hash of the exact bit pattern, for cheap identity checks.
    pub fn digest(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.n.hash(&mut h);
        for v in &self.data {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn bit_identical(&self, other: &SystemMatrix) -> bool {
        self.n == other.n
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// One entry of the system matrix. Both full and partial assembly go
/// through here, so identical inputs give bit-identical entries.
#[inline]
pub fn entry(mesh: &Mesh, row: usize, col: usize) -> f64 {
    let obs = &mesh.segments[row];
    let src = &mesh.segments[col];
    match obs.kind {
        BoundaryKind::ConductorDielectric { .. } => {
            -INV_2PI_EPS0 * log_potential_integral(obs.midpoint, src)
        }
        BoundaryKind::DielectricDielectric => {
            if row == col {
                // The principal value over a straight segment vanishes.
                let (eps_pos, eps_neg) = (obs.eps_pos, obs.eps_neg);
                -((eps_neg + eps_pos) / (eps_neg - eps_pos)) / (2.0 * EPS0)
            } else {
                INV_2PI_EPS0 * normal_field_integral(obs.midpoint, obs.normal(), src)
            }
        }
    }
}

fn fill_column(mesh: &Mesh, col: usize, out: &mut [f64]) {
    for (row, v) in out.iter_mut().enumerate() {
        *v = entry(mesh, row, col);
    }
}

/// Assemble the full system for a mesh. Columns are filled in parallel when
/// the `parallel` feature is on; every entry is written exactly once.
pub fn assemble(mesh: &Mesh) -> SystemMatrix {
    let n = mesh.len();
    let mut data = vec![0.0; n * n];
    if n > 0 {
        for_each_column(&mut data, n, |col, out| fill_column(mesh, col, out));
    }
    SystemMatrix { n, data }
}

#[cfg(feature = "parallel")]
fn for_each_column(data: &mut [f64], n: usize, f: impl Fn(usize, &mut [f64]) + Sync) {
    use rayon::prelude::*;
    data.par_chunks_mut(n)
        .enumerate()
        .for_each(|(col, out)| f(col, out));
}

#[cfg(not(feature = "parallel"))]
fn for_each_column(data: &mut [f64], n: usize, f: impl Fn(usize, &mut [f64])) {
    data.chunks_mut(n)
        .enumerate()
        .for_each(|(col, out)| f(col, out));
}

/// Right-hand sides: one unit-voltage column per signal conductor.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcitationMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ExcitationMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    pub fn identity_columns(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    fn as_faer(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.rows, self.cols)
    }
}

pub fn build_excitation(mesh: &Mesh) -> ExcitationMatrix {
    let nc = mesh.conductor_count;
    ExcitationMatrix::identity_columns(mesh.len(), nc, |i, j| {
        match mesh.segments[i].kind.conductor() {
            Some(id) if id == j + 1 => 1.0,
            _ => 0.0,
        }
    })
}

/// Charge densities `σ_T`, one column per driven conductor.
#[derive(Clone, Debug, PartialEq)]
pub struct ChargeSolution {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// Per-column potential constant added on conductor rows (all zeros
    /// for a plain solve).
    pub offsets: Vec<f64>,
}

impl ChargeSolution {
    /// Wrap column-major data with zero potential offsets.
    pub fn from_columns(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self {
            rows,
            cols,
            data,
            offsets: vec![0.0; cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    /// `‖SΣ + e·c − V‖_F / ‖V‖_F`, where `e` marks the rows that carry the
    /// potential constant.
    pub fn relative_residual(
        &self,
        s: &SystemMatrix,
        v: &ExcitationMatrix,
        offset_rows: &[bool],
    ) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.cols {
            let x = self.column(j);
            for i in 0..self.rows {
                let mut acc = 0.0;
                for (k, xk) in x.iter().enumerate() {
                    acc += s.get(i, k) * xk;
                }
                if offset_rows.get(i).copied().unwrap_or(false) {
                    acc += self.offsets[j];
                }
                let r = acc - v.get(i, j);
                num += r * r;
                den += v.get(i, j) * v.get(i, j);
            }
        }
        (num / den).sqrt()
    }
}

/// LU factorization with partial pivoting of a system matrix.
pub struct Factorization {
    lu: faer::linalg::solvers::PartialPivLu<f64>,
    n: usize,
}

impl Factorization {
    pub fn new(s: &SystemMatrix) -> Result<Self, SolveError> {
        let lu = s.as_faer().partial_piv_lu();
        let u = lu.U();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..s.n() {
            let d = u[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
        if !ratio.is_finite() || ratio <= 1e3 * f64::EPSILON * f64::EPSILON {
            return Err(SolveError::Singular {
                pivot_ratio: ratio,
                condition: if ratio > 0.0 {
                    1.0 / ratio
                } else {
                    f64::INFINITY
                },
            });
        }
        Ok(Self { lu, n: s.n() })
    }

    fn solve_mat(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        self.lu.solve(rhs)
    }
}

fn to_solution(x: Mat<f64>, cols: usize) -> ChargeSolution {
    let rows = x.nrows();
    let mut data = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            data.push(x[(i, j)]);
        }
    }
    ChargeSolution {
        rows,
        cols,
        data,
        offsets: vec![0.0; cols],
    }
}

/// Plain direct solve `Σ = S⁻¹V`.
pub fn solve(s: &SystemMatrix, v: &ExcitationMatrix) -> Result<ChargeSolution, SolveError> {
    if v.rows() != s.n() {
        return Err(SolveError::Dimension(format!(
            "system is {0}x{0}, excitation has {1} rows",
            s.n(),
            v.rows()
        )));
    }
    let f = Factorization::new(s)?;
    Ok(to_solution(f.solve_mat(v.as_faer()), v.cols()))
}

/// Rows that carry the free potential constant: every conductor row.
pub fn offset_rows(mesh: &Mesh) -> Vec<bool> {
    mesh.segments
        .iter()
        .map(|s| s.kind.is_conductor())
        .collect()
}

/// Solve with zero net charge per excitation.
///
/// With `e` the conductor-row indicator and `ℓ` the segment lengths, solves
/// `SΣ + e cᵀ = V`, `ℓᵀΣ = 0` through one extra right-hand side:
/// `X = S⁻¹V`, `y = S⁻¹e`, `c = ℓᵀX / ℓᵀy`, `Σ = X − y cᵀ`.
pub fn solve_neutral(
    factorization: &Factorization,
    mesh: &Mesh,
    v: &ExcitationMatrix,
) -> Result<ChargeSolution, SolveError> {
    let n = factorization.n;
    if v.rows() != n || mesh.len() != n {
        return Err(SolveError::Dimension(format!(
            "system is {n}x{n}, mesh has {} segments, excitation has {} rows",
            mesh.len(),
            v.rows()
        )));
    }
    let nc = v.cols();
    let rhs = Mat::<f64>::from_fn(n, nc + 1, |i, j| {
        if j < nc {
            v.get(i, j)
        } else if mesh.segments[i].kind.is_conductor() {
            1.0
        } else {
            0.0
        }
    });
    let x = factorization.solve_mat(rhs.as_ref());
    let lengths: Vec<f64> = mesh.segments.iter().map(|s| s.length).collect();
    let weigh = |j: usize| -> f64 { lengths.iter().enumerate().map(|(i, l)| l * x[(i, j)]).sum() };
    let ly = weigh(nc);
    if ly == 0.0 || !ly.is_finite() {
        return Err(SolveError::NoConductorRows);
    }
    let mut data = Vec::with_capacity(n * nc);
    let mut offsets = Vec::with_capacity(nc);
    for j in 0..nc {
        let c = weigh(j) / ly;
        offsets.push(c);
        for i in 0..n {
            data.push(x[(i, j)] - c * x[(i, nc)]);
        }
    }
    Ok(ChargeSolution {
        rows: n,
        cols: nc,
        data,
        offsets,
    })
}

/// Maxwell capacitance matrix, stored row-major in F/m.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceMatrix {
    pub size: usize,
    pub values: Vec<f64>,
    /// Mesh size `N` used to produce the matrix (0 for ingested data).
    pub mesh_size: usize,
    pub plan: String,
    pub method: String,
}

impl CapacitanceMatrix {
    pub fn from_rows(rows: &[Vec<f64>], method: &str) -> Self {
        let size = rows.len();
        assert!(
            rows.iter().all(|r| r.len() == size),
            "matrix must be square"
        );
        Self {
            size,
            values: rows.iter().flatten().copied().collect(),
            mesh_size: 0,
            plan: String::new(),
            method: method.to_string(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    /// Entry in pF/m.
    pub fn pf(&self, i: usize, j: usize) -> f64 {
        self.get(i, j) * 1e12
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|i| self.row(i).to_vec()).collect()
    }
}

/// `C[i][j] = Σ_{s ∈ conductor i} ε_r(s)·σ[s][j]·ℓ(s)`: free charge on
/// conductor `i` with conductor `j` at one volt.
pub fn extract_capacitance(mesh: &Mesh, sigma: &ChargeSolution) -> CapacitanceMatrix {
    let nc = mesh.conductor_count;
    let mut values = vec![0.0; nc * nc];
    for j in 0..nc {
        let col = sigma.column(j);
        for (s, seg) in mesh.segments.iter().enumerate() {
            if let Some(id) = seg.kind.conductor() {
                if id >= 1 {
                    values[(id - 1) * nc + j] += seg.eps_pos * col[s] * seg.length;
                }
            }
        }
    }
    CapacitanceMatrix {
        size: nc,
        values,
        mesh_size: mesh.len(),
        plan: String::new(),
        method: String::new(),
    }
}

/// Result of one full analysis of a mesh.
pub struct Analysis {
    pub system: SystemMatrix,
    pub charges: ChargeSolution,
    pub capacitance: CapacitanceMatrix,
}

/// Factor, solve with neutral net charge, and extract `C`.
pub fn solve_assembled(
    mesh: &Mesh,
    system: &SystemMatrix,
) -> Result<(ChargeSolution, CapacitanceMatrix), SolveError> {
    let v = build_excitation(mesh);
    let factorization = Factorization::new(system)?;
    let charges = solve_neutral(&factorization, mesh, &v)?;
    let capacitance = extract_capacitance(mesh, &charges);
    Ok((charges, capacitance))
}

/// Solve an already assembled system for its mesh.
pub fn solve_system(mesh: &Mesh, system: SystemMatrix) -> Result<Analysis, SolveError> {
    let (charges, capacitance) = solve_assembled(mesh, &system)?;
    Ok(Analysis {
        system,
        charges,
        capacitance,
    })
}

/// Assemble, solve and extract.
pub fn analyze(mesh: &Mesh) -> Result<Analysis, SolveError> {
    solve_system(mesh, assemble(mesh))
}

/// Entries that differ between two assemblies.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeMask {
    n: usize,
    /// Column-major, `true` = changed.
    bits: Vec<bool>,
}

impl ChangeMask {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[col * self.n + row]
    }

    pub fn all(n: usize, value: bool) -> Self {
        Self {
            n,
            bits: vec![value; n * n],
        }
    }

    /// Build from row-major flags. Panics unless `rows` is square.
    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "mask must be square");
        let mut bits = vec![false; n * n];
        for (i, r) in rows.iter().enumerate() {
            for (j, &b) in r.iter().enumerate() {
                bits[j * n + i] = b;
            }
        }
        Self { n, bits }
    }

    pub fn changed(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn unchanged_fraction(&self) -> f64 {
        if self.n == 0 {
            return 1.0;
        }
        1.0 - self.changed() as f64 / (self.n * self.n) as f64
    }

    /// Row-major bytes, 1 for changed entries.
    pub fn to_row_major(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(u8::from(self.get(i, j)));
            }
        }
        out
    }
}

pub fn diff_mask(a: &SystemMatrix, b: &SystemMatrix) -> Result<ChangeMask, SolveError> {
    if a.n != b.n {
        return Err(SolveError::Dimension(format!(
            "cannot compare {0}x{0} and {1}x{1} systems; segment counts drifted between sweep points",
            a.n, b.n
        )));
    }
    Ok(ChangeMask {
        n: a.n,
        bits: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| x.to_bits() != y.to_bits())
            .collect(),
    })
}

fn same_point(a: crate::geometry::Point, b: crate::geometry::Point) -> bool {
    a.x.to_bits() == b.x.to_bits() && a.y.to_bits() == b.y.to_bits()
}

fn same_placement(a: &Segment, b: &Segment) -> bool {
    same_point(a.start, b.start)
        && same_point(a.end, b.end)
        && same_point(a.midpoint, b.midpoint)
        && same_point(a.tangent, b.tangent)
        && a.length.to_bits() == b.length.to_bits()
        && a.kind == b.kind
}

fn same_material(a: &Segment, b: &Segment) -> bool {
    a.eps_pos.to_bits() == b.eps_pos.to_bits() && a.eps_neg.to_bits() == b.eps_neg.to_bits()
}

/// Whether [`entry`] reads identical inputs for `(row, col)` in two
/// meshes. Off-diagonal entries see the observation midpoint only through
/// its offset from the source start, plus the source tangent and length and
/// the observation tangent and kind. Permittivities matter on the diagonal
/// alone.
fn same_entry_inputs(a: &Mesh, b: &Mesh, row: usize, col: usize) -> bool {
    let (oa, ob) = (&a.segments[row], &b.segments[row]);
    let (sa, sb) = (&a.segments[col], &b.segments[col]);
    let same_core = same_point(oa.midpoint - sa.start, ob.midpoint - sb.start)
        && same_point(sa.tangent, sb.tangent)
        && sa.length.to_bits() == sb.length.to_bits()
        && same_point(oa.tangent, ob.tangent)
        && oa.kind == ob.kind;
    if row == col {
        same_core
            && oa.eps_pos.to_bits() == ob.eps_pos.to_bits()
            && oa.eps_neg.to_bits() == ob.eps_neg.to_bits()
    } else {
        same_core
    }
}

/// Entries whose inputs differ between `reference` and any of `others`.
///
/// Comparing two assembled systems can miss entries that agree bit for bit
/// at those two points only by coincidence. This mask instead flags every
/// entry that could differ at any of the listed points, so partial
/// reassembly on top of the reference system is exact for all of them.
pub fn input_change_mask(reference: &Mesh, others: &[Mesh]) -> Result<ChangeMask, SolveError> {
    let n = reference.len();
    if let Some(m) = others.iter().find(|m| m.len() != n) {
        return Err(SolveError::Dimension(format!(
            "meshes have {n} and {} segments; segment counts drifted between sweep points",
            m.len()
        )));
    }
    let changed = |same: fn(&Segment, &Segment) -> bool| -> Vec<bool> {
        (0..n)
            .map(|i| {
                others
                    .iter()
                    .any(|m| !same(&reference.segments[i], &m.segments[i]))
            })
            .collect()
    };
    let moved = changed(same_placement);
    let material = changed(same_material);
    let mut bits = vec![false; n * n];
    for col in 0..n {
        for row in 0..n {
            let flag = if moved[row] || moved[col] {
                others
                    .iter()
                    .any(|m| !same_entry_inputs(reference, m, row, col))
            } else {
                row == col && material[row]
            };
            bits[col * n + row] = flag;
        }
    }
    Ok(ChangeMask { n, bits })
}

impl ChangeMask {
    pub fn union(&self, other: &ChangeMask) -> Result<ChangeMask, SolveError> {
        if self.n != other.n {
            return Err(SolveError::Dimension(format!(
                "cannot merge {0}x{0} and {1}x{1} masks",
                self.n, other.n
            )));
        }
        Ok(ChangeMask {
            n: self.n,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        })
    }
}

/// Copy `base` and recompute only the entries flagged in `mask` from `mesh`.
pub fn partial_reassemble(
    base: &SystemMatrix,
    mesh: &Mesh,
    mask: &ChangeMask,
) -> Result<SystemMatrix, SolveError> {
    let mut system = base.clone();
    reassemble_in_place(&mut system, mesh, mask)?;
    Ok(system)
}

/// Recompute the masked entries of `system` for `mesh`, leaving the rest
/// untouched. A sweep can keep one working matrix this way instead of
/// copying the reference system at every point.
pub fn reassemble_in_place(
    system: &mut SystemMatrix,
    mesh: &Mesh,
    mask: &ChangeMask,
) -> Result<(), SolveError> {
    let n = system.n;
    if mask.n != n || mesh.len() != n {
        return Err(SolveError::Dimension(format!(
            "base system is {n}x{n}, mask is {0}x{0}, mesh has {1} segments",
            mask.n,
            mesh.len()
        )));
    }
    if n > 0 {
        for_each_column(&mut system.data, n, |col, out| {
            let flags = &mask.bits[col * n..(col + 1) * n];
            for (row, v) in out.iter_mut().enumerate() {
                if flags[row] {
                    *v = entry(mesh, row, col);
                }
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build, discretize, SegmentationPlan, StructureSpec, MM};
    use approx::assert_relative_eq;

    fn small_mesh(m: usize) -> Mesh {
        let g = build(&StructureSpec::mplp1(m, 0.018 * MM)).unwrap();
        discretize(&g, &SegmentationPlan::by_axis(&g, 2, 6))
    }

    #[test]
    fn dielectric_self_entry() {
        let mut mesh = small_mesh(1);
        let i = mesh
            .segments
            .iter()
            .position(|s| !s.kind.is_conductor())
            .unwrap();
        mesh.segments[i].eps_pos = 1.0;
        mesh.segments[i].eps_neg = 3.0;
        assert_relative_eq!(entry(&mesh, i, i), -1.0 / EPS0, max_relative = 1e-15);
    }

    #[test]
    fn excitation_pattern() {
        let mesh = small_mesh(1);
        let v = build_excitation(&mesh);
        assert_eq!(v.cols(), 1);
        let ones = (0..v.rows()).filter(|&i| v.get(i, 0) == 1.0).count();
        assert_eq!(ones, mesh.conductor_segments(1).count());
        for i in mesh.conductor_segments(0) {
            assert_eq!(v.get(i, 0), 0.0);
        }
        let coarse = {
            let g = build(&StructureSpec::mplp1(1, 0.018 * MM)).unwrap();
            discretize(&g, &SegmentationPlan(vec![1; g.edges.len()]))
        };
        let v = build_excitation(&coarse);
        assert_eq!((0..v.rows()).filter(|&i| v.get(i, 0) == 1.0).count(), 4);
        assert_eq!(build_excitation(&small_mesh(10)).cols(), 10);
    }

    #[test]
    fn identity_solve() {
        let s = SystemMatrix::from_fn(5, |i, j| f64::from(u8::from(i == j)));
        let v = ExcitationMatrix::identity_columns(5, 2, |i, j| (i * 2 + j) as f64);
        let x = solve(&s, &v).unwrap();
        for i in 0..5 {
            for j in 0..2 {
                assert_eq!(x.get(i, j), v.get(i, j));
            }
        }
    }

    #[test]
    fn singular_is_reported() {
        let s = SystemMatrix::from_fn(3, |i, _| i as f64);
        let v = ExcitationMatrix::identity_columns(3, 1, |_, _| 1.0);
        assert!(matches!(solve(&s, &v), Err(SolveError::Singular { .. })));
    }

    #[test]
    fn single_segment_capacitance_sum() {
        // q = C v: a conductor whose only face carries σ ℓ ε_r = 1e-10 C/m.
        let mut mesh = small_mesh(1);
        let n = mesh.len();
        let first = mesh.conductor_segments(1).next().unwrap();
        for s in mesh.segments.iter_mut() {
            if s.kind.conductor() == Some(1) {
                s.eps_pos = 2.0;
            }
        }
        let len = mesh.segments[first].length;
        let mut data = vec![0.0; n];
        data[first] = 1e-10 / (2.0 * len);
        let sol = ChargeSolution {
            rows: n,
            cols: 1,
            data,
            offsets: vec![0.0],
        };
        let c = extract_capacitance(&mesh, &sol);
        assert_relative_eq!(c.pf(0, 0), 100.0, max_relative = 1e-12);
    }

    #[test]
    fn mask_of_identical_systems_is_empty() {
        let s = assemble(&small_mesh(2));
        let mask = diff_mask(&s, &s.clone()).unwrap();
        assert_eq!(mask.changed(), 0);
        assert_eq!(mask.unchanged_fraction(), 1.0);
        let other = assemble(&small_mesh(1));
        assert!(diff_mask(&s, &other).is_err());
    }

    #[test]
    fn partial_with_extreme_masks() {
        let mesh = small_mesh(2);
        let s = assemble(&mesh);
        let none = partial_reassemble(&s, &mesh, &ChangeMask::all(s.n(), false)).unwrap();
        assert!(none.bit_identical(&s));
        let zero = SystemMatrix::from_fn(s.n(), |_, _| 0.0);
        let full = partial_reassemble(&zero, &mesh, &ChangeMask::all(s.n(), true)).unwrap();
        assert!(full.bit_identical(&s));
    }

    #[test]
    fn neutral_solve_has_zero_net_charge() {
        let mesh = small_mesh(3);
        let a = analyze(&mesh).unwrap();
        for j in 0..3 {
            let q: f64 = mesh
                .segments
                .iter()
                .enumerate()
                .map(|(i, s)| s.length * a.charges.get(i, j))
                .sum();
            let scale: f64 = mesh
                .segments
                .iter()
                .enumerate()
                .map(|(i, s)| (s.length * a.charges.get(i, j)).abs())
                .sum();
            assert!(q.abs() < 1e-12 * scale, "net charge {q} vs {scale}");
        }
        let v = build_excitation(&mesh);
        let r = a
            .charges
            .relative_residual(&a.system, &v, &offset_rows(&mesh));
        assert!(r < 1e-10, "residual {r}");
    }

    #[test]
    fn symmetric_pair_in_vacuum_like_stack() {
        let mut spec = StructureSpec::mplp1(2, 0.018 * MM);
        spec.family = crate::geometry::Family::Generic;
        let g = build(&spec).unwrap();
        let mesh = discretize(&g, &SegmentationPlan::by_axis(&g, 3, 12));
        let c = analyze(&mesh).unwrap().capacitance;
        assert_relative_eq!(c.get(0, 0), c.get(1, 1), max_relative = 1e-9);
        assert_relative_eq!(c.get(0, 1), c.get(1, 0), max_relative = 1e-6);
        assert!(c.get(0, 0) > 0.0 && c.get(0, 1) < 0.0);
    }
}
