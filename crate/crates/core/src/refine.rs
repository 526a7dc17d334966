//! Segmentation strategies and convergence metrics.
//!
//! Three strategies are available: uniform `t/n` meshes refined by stepping
//! `n` through 1, 3, 5, ...; the classic loop that bisects the quarter of
//! all segments carrying the largest charge density of the first
//! excitation; and the per-excitation variant ("Method I") that bisects the
//! top `k/N_C` percent of segments of every excitation column.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    self, discretize, refine, GeometryError, Mesh, SegmentationPlan, StructureSpec,
};
use crate::system::{analyze, CapacitanceMatrix, ChargeSolution, SolveError};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid refinement config: {0}")]
    Config(String),
    #[error("relative difference undefined: reference value is zero")]
    ZeroReference,
    #[error("cannot compare {0}x{0} and {1}x{1} matrices")]
    Dimension(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Uniform `t/n` segmentation, refined by `n += 2`.
    Uniform { n: usize },
    /// Bisect the top 25% of segments by |σ| of the first excitation.
    AdaptiveTop25,
    /// Bisect the top `k/N_C` percent of segments of every excitation.
    MethodI { k: f64 },
}

/// Starting mesh for adaptive strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialPlan {
    /// Segments on edges perpendicular to the x axis.
    pub vertical: usize,
    /// Segments on edges perpendicular to the y axis.
    pub horizontal: usize,
}

impl Default for InitialPlan {
    fn default() -> Self {
        Self {
            vertical: 3,
            horizontal: 40,
        }
    }
}

impl InitialPlan {
    pub fn plan(&self, g: &geometry::Geometry) -> SegmentationPlan {
        SegmentationPlan::by_axis(g, self.vertical, self.horizontal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub strategy: Strategy,
    pub initial: InitialPlan,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            tol: 0.01,
            max_iters: 10,
            strategy: Strategy::MethodI { k: 75.0 },
            initial: InitialPlan::default(),
        }
    }
}

impl RefinementConfig {
    pub fn method1(k: f64) -> Self {
        Self {
            strategy: Strategy::MethodI { k },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.tol > 0.0 && self.tol < 1.0) && self.tol != 1.0 {
            return Err(RefineError::Config(format!(
                "tol must be in (0, 1], got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(RefineError::Config("max_iters must be at least 1".into()));
        }
        match self.strategy {
            Strategy::MethodI { k } if !(k > 0.0 && k <= 100.0) => Err(RefineError::Config(
                format!("k must be in (0, 100], got {k}"),
            )),
            Strategy::Uniform { n: 0 } => Err(RefineError::Config("n must be at least 1".into())),
            _ => Ok(()),
        }
        .and_then(|()| {
            if self.initial.vertical == 0 || self.initial.horizontal == 0 {
                Err(RefineError::Config(
                    "initial segment counts must be positive".into(),
                ))
            } else {
                Ok(())
            }
        })
    }

    pub fn tag(&self) -> String {
        match self.strategy {
            Strategy::Uniform { n } => format!("uniform t/{n}"),
            Strategy::AdaptiveTop25 => "adaptive-25%".into(),
            Strategy::MethodI { k } => format!("method-I k={k}"),
        }
    }
}

/// Uniform plan with target segment length `t / n`.
pub fn uniform_plan(g: &geometry::Geometry, t: f64, n: usize) -> SegmentationPlan {
    SegmentationPlan::uniform(g, t, n)
}

/// Indices of the `count` largest `|values|`, ties to the lower index.
fn top_by_magnitude(values: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// `⌈0.25 N⌉` segments with the largest |σ| in the first excitation column.
pub fn select_top25(mesh: &Mesh, sigma: &ChargeSolution) -> BTreeSet<usize> {
    let n = mesh.len();
    top_by_magnitude(sigma.column(0), n.div_ceil(4))
        .into_iter()
        .collect()
}

/// Union over excitation columns of the top `⌈(k/N_C)% · N⌉` segments by
/// |σ| in that column.
pub fn select_method1(mesh: &Mesh, sigma: &ChargeSolution, k: f64) -> BTreeSet<usize> {
    let n = mesh.len();
    let columns = sigma.cols().max(1);
    let quota = ((k * n as f64) / (100.0 * columns as f64) - 1e-9)
        .ceil()
        .clamp(1.0, n as f64) as usize;
    let mut out = BTreeSet::new();
    for j in 0..sigma.cols() {
        out.extend(top_by_magnitude(sigma.column(j), quota));
    }
    out
}

/// `|prev − curr| / |curr|` in percent.
pub fn delta_c(prev: f64, curr: f64) -> Result<f64, RefineError> {
    if curr == 0.0 {
        return Err(RefineError::ZeroReference);
    }
    Ok(100.0 * (prev - curr).abs() / curr.abs())
}

/// `‖prev − curr‖_F / ‖curr‖_F` in percent.
pub fn delta_f(prev: &CapacitanceMatrix, curr: &CapacitanceMatrix) -> Result<f64, RefineError> {
    if prev.size != curr.size {
        return Err(RefineError::Dimension(prev.size, curr.size));
    }
    let den = curr.frobenius();
    if den == 0.0 {
        return Err(RefineError::ZeroReference);
    }
    let num = prev
        .values
        .iter()
        .zip(&curr.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Mesh size `N` of this iteration.
    pub segments: usize,
    /// Controlled quantity `K = ‖C‖_F`, F/m.
    pub k_value: f64,
    /// Relative change of `K` against the previous iteration.
    pub relative_change: Option<f64>,
    /// Segments bisected to obtain this mesh (0 for the first).
    pub refined: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub method: String,
    pub tol: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub capacitance: CapacitanceMatrix,
    /// Bisection sets, one per adaptive iteration, in the index space of
    /// the mesh they were applied to.
    #[serde(skip)]
    pub history: Vec<BTreeSet<usize>>,
    #[serde(skip)]
    pub mesh: Option<Mesh>,
    /// Every iteration's matrix, oldest first.
    #[serde(skip)]
    pub matrices: Vec<CapacitanceMatrix>,
}

impl ConvergenceReport {
    /// Number of refinement steps after the initial solve.
    pub fn steps(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }
}

fn relative_k_change(prev: f64, curr: f64) -> f64 {
    (curr - prev).abs() / prev.abs()
}

/// Pick the segments to bisect according to an adaptive strategy.
pub fn select(strategy: Strategy, mesh: &Mesh, sigma: &ChargeSolution) -> BTreeSet<usize> {
    match strategy {
        Strategy::AdaptiveTop25 => select_top25(mesh, sigma),
        Strategy::MethodI { k } => select_method1(mesh, sigma, k),
        Strategy::Uniform { .. } => panic!("uniform strategy has no adaptive selector"),
    }
}

/// Solve, refine and re-solve until `‖C‖_F` settles within `tol`.
pub fn converge(
    spec: &StructureSpec,
    config: &RefinementConfig,
) -> Result<ConvergenceReport, RefineError> {
    config.validate()?;
    let g = geometry::build(spec)?;
    match config.strategy {
        Strategy::Uniform { n } => converge_uniform(&g, spec.thickness, n, config),
        strategy => {
            let mesh = discretize(&g, &config.initial.plan(&g));
            converge_adaptive(mesh, strategy, config)
        }
    }
}

fn label(mut c: CapacitanceMatrix, plan: String, method: &str) -> CapacitanceMatrix {
    c.plan = plan;
    c.method = method.to_string();
    c
}

fn converge_uniform(
    g: &geometry::Geometry,
    t: f64,
    n0: usize,
    config: &RefinementConfig,
) -> Result<ConvergenceReport, RefineError> {
    let method = config.tag();
    let mut iterations = Vec::new();
    let mut matrices: Vec<CapacitanceMatrix> = Vec::new();
    let mut converged = false;
    let mut last_mesh = None;
    let mut n = n0;
    for step in 0..=config.max_iters {
        let mesh = discretize(g, &uniform_plan(g, t, n));
        let c = label(
            analyze(&mesh)?.capacitance,
            format!("uniform t/{n}"),
            &method,
        );
        let k_value = c.frobenius();
        let relative_change = matrices
            .last()
            .map(|p| relative_k_change(p.frobenius(), k_value));
        iterations.push(IterationRecord {
            segments: mesh.len(),
            k_value,
            relative_change,
            refined: 0,
        });
        matrices.push(c);
        last_mesh = Some(mesh);
        if let Some(r) = relative_change {
            if r <= config.tol {
                converged = true;
                break;
            }
        }
        if step == config.max_iters {
            break;
        }
        n += 2;
    }
    Ok(ConvergenceReport {
        method,
        tol: config.tol,
        iterations,
        converged,
        capacitance: matrices.last().cloned().expect("at least one solve"),
        history: Vec::new(),
        mesh: last_mesh,
        matrices,
    })
}

/// Adaptive loop from an explicit starting mesh.
pub fn converge_adaptive(
    mut mesh: Mesh,
    strategy: Strategy,
    config: &RefinementConfig,
) -> Result<ConvergenceReport, RefineError> {
    let method = config.tag();
    let analysis = analyze(&mesh)?;
    let mut sigma = analysis.charges;
    let first = label(analysis.capacitance, "initial".into(), &method);
    let mut k_prev = first.frobenius();
    let mut iterations = vec![IterationRecord {
        segments: mesh.len(),
        k_value: k_prev,
        relative_change: None,
        refined: 0,
    }];
    let mut matrices = vec![first];
    let mut history = Vec::new();
    let mut converged = false;
    for i in 1..=config.max_iters {
        let ids = select(strategy, &mesh, &sigma);
        mesh = refine(&mesh, &ids);
        let analysis = analyze(&mesh)?;
        sigma = analysis.charges;
        let c = label(analysis.capacitance, format!("adaptive step {i}"), &method);
        let k_value = c.frobenius();
        let change = relative_k_change(k_prev, k_value);
        iterations.push(IterationRecord {
            segments: mesh.len(),
            k_value,
            relative_change: Some(change),
            refined: ids.len(),
        });
        history.push(ids);
        matrices.push(c);
        k_prev = k_value;
        if change <= config.tol {
            converged = true;
            break;
        }
    }
    Ok(ConvergenceReport {
        method,
        tol: config.tol,
        iterations,
        converged,
        capacitance: matrices.last().cloned().expect("at least one solve"),
        history,
        mesh: Some(mesh),
        matrices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build, MM};
    use approx::assert_relative_eq;

    fn fake_solution(cols: Vec<Vec<f64>>) -> ChargeSolution {
        let rows = cols[0].len();
        let flat: Vec<f64> = cols.iter().flatten().copied().collect();
        crate::system::ChargeSolution::from_columns(rows, cols.len(), flat)
    }

    fn mesh_of(n_segments: usize) -> Mesh {
        // A mesh whose size we control: one conductor, counts on the first edge.
        let g = build(&StructureSpec::mplp1(1, 0.018 * MM)).unwrap();
        let mut counts = vec![1; g.edges.len()];
        counts[0] = n_segments + 1 - g.edges.len();
        discretize(&g, &SegmentationPlan(counts))
    }

    #[test]
    fn top25_counts_and_ties() {
        let mesh = mesh_of(20);
        assert_eq!(mesh.len(), 20);
        let mut vals = vec![0.0; 20];
        vals[3] = -9.0;
        vals[11] = 5.0;
        vals[7] = 4.0;
        vals[0] = 3.0;
        vals[19] = 2.5;
        vals[15] = 2.0;
        let picked = select_top25(&mesh, &fake_solution(vec![vals]));
        assert_eq!(picked, [0, 3, 7, 11, 19].into_iter().collect());

        let equal = select_top25(&mesh, &fake_solution(vec![vec![1.0; 20]]));
        assert_eq!(equal, (0..5).collect());
    }

    #[test]
    fn top25_rounds_up() {
        let mesh = mesh_of(21);
        let picked = select_top25(&mesh, &fake_solution(vec![vec![1.0; 21]]));
        assert_eq!(picked.len(), 6);
    }

    #[test]
    fn method1_single_column_is_top_k() {
        let mesh = mesh_of(20);
        let vals: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let picked = select_method1(&mesh, &fake_solution(vec![vals]), 75.0);
        assert_eq!(picked, (5..20).collect());
    }

    #[test]
    fn method1_union_of_identical_columns() {
        let mesh = mesh_of(20);
        let vals: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let picked = select_method1(&mesh, &fake_solution(vec![vals.clone(), vals]), 50.0);
        // Per-column quota is 25% of 20.
        assert_eq!(picked, (15..20).collect());
    }

    #[test]
    fn method1_never_exceeds_mesh() {
        let mesh = mesh_of(24);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|c| (0..24).map(|i| ((i * 5 + c * 7) % 24) as f64).collect())
            .collect();
        let picked = select_method1(&mesh, &fake_solution(cols), 100.0);
        assert!(picked.len() <= 24);
    }

    #[test]
    fn deltas() {
        assert_relative_eq!(delta_c(89.0, 92.1).unwrap(), 3.3659, max_relative = 1e-4);
        assert_eq!(delta_c(92.0, 92.0).unwrap(), 0.0);
        assert!(delta_c(1.0, 0.0).is_err());
        let a = CapacitanceMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], "");
        let b = CapacitanceMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]], "");
        assert_eq!(delta_f(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(
            delta_f(&a, &b).unwrap(),
            100.0 / 5f64.sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn config_validation() {
        assert!(RefinementConfig::method1(0.0).validate().is_err());
        assert!(RefinementConfig::method1(101.0).validate().is_err());
        let mut c = RefinementConfig {
            max_iters: 0,
            ..RefinementConfig::default()
        };
        assert!(c.validate().is_err());
        c.max_iters = 1;
        c.tol = 0.0;
        assert!(c.validate().is_err());
        assert!(RefinementConfig::default().validate().is_ok());
    }

    #[test]
    fn full_tolerance_stops_after_one_step() {
        let spec = StructureSpec::mplp1(2, 0.018 * MM);
        let config = RefinementConfig {
            tol: 1.0,
            max_iters: 5,
            strategy: Strategy::MethodI { k: 75.0 },
            initial: InitialPlan {
                vertical: 2,
                horizontal: 8,
            },
        };
        let report = converge(&spec, &config).unwrap();
        assert_eq!(report.steps(), 1);
        assert!(report.converged);
        // Mesh grows by exactly the refined count.
        let it = &report.iterations;
        assert_eq!(it[1].segments, it[0].segments + it[1].refined);
    }
}
