//! Multivariate parameter sweeps with incremental system reassembly.
//!
//! Every sweep point is meshed with the same fixed per-edge segment counts
//! and the same bisection recipe, so segment `k` of one point corresponds to
//! segment `k` of any other. Method I assembles the first two points in
//! full, diffs them to find the entries that depend on the swept
//! parameters, and from the third point on recomputes only those entries
//! on top of the first point's matrix. Method II assembles every point in
//! full. Both produce bit-identical systems. The mask also covers every
//! entry whose inputs change anywhere in the sweep, so entries that agree
//! only by coincidence at the first two points are still recomputed.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, discretize, refine, GeometryError, Mesh, StructureSpec};
use crate::refine::{converge_adaptive, InitialPlan, RefineError, RefinementConfig, Strategy};
use crate::system::{
    assemble, diff_mask, input_change_mask, reassemble_in_place, solve_assembled,
    CapacitanceMatrix, ChangeMask, SolveError, SystemMatrix,
};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error("invalid sweep plan: {0}")]
    Plan(String),
    #[error("sweep point {point} has {got} segments, expected {expected}; segment counts must not drift across a sweep")]
    Drift {
        point: usize,
        got: usize,
        expected: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parameter {
    /// Conductor thickness `t`.
    Thickness,
    /// Width of every conductor.
    Width,
    /// Every gap between conductors.
    Gap,
    /// Relative permittivity of a layer (0-based index, bottom first).
    LayerEps(usize),
}

impl Parameter {
    /// Parse `t`, `w`, `s`, or `epsN` (1-based layer number).
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "t" => Some(Self::Thickness),
            "w" => Some(Self::Width),
            "s" => Some(Self::Gap),
            _ => name
                .strip_prefix("eps")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|n| *n >= 1)
                .map(|n| Self::LayerEps(n - 1)),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Thickness => "t".into(),
            Self::Width => "w".into(),
            Self::Gap => "s".into(),
            Self::LayerEps(i) => format!("eps{}", i + 1),
        }
    }

    pub fn is_geometric(&self) -> bool {
        !matches!(self, Self::LayerEps(_))
    }

    fn apply(&self, spec: &mut StructureSpec, value: f64) -> Result<(), SweepError> {
        match self {
            Self::Thickness => spec.thickness = value,
            Self::Width => spec.widths.iter_mut().for_each(|w| *w = value),
            Self::Gap => spec.gaps.iter_mut().for_each(|s| *s = value),
            Self::LayerEps(i) => {
                let layers = spec.layers.len();
                spec.layers
                    .get_mut(*i)
                    .ok_or_else(|| {
                        SweepError::Plan(format!("eps{} but the stack has {layers} layers", i + 1))
                    })?
                    .eps = value;
            }
        }
        Ok(())
    }

    /// Nominal value of this parameter in `spec`.
    pub fn nominal(&self, spec: &StructureSpec) -> Option<f64> {
        match self {
            Self::Thickness => Some(spec.thickness),
            Self::Width => spec.widths.first().copied(),
            Self::Gap => spec.gaps.first().copied(),
            Self::LayerEps(i) => spec.layers.get(*i).map(|l| l.eps),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRange {
    pub parameter: Parameter,
    pub values: Vec<f64>,
}

/// Parameters swept jointly: point `i` takes `values[i]` of every range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub base: StructureSpec,
    pub parameters: Vec<ParameterRange>,
    /// Keep the total width fixed by absorbing width and gap changes in
    /// the edge margin.
    pub hold_envelope: bool,
}

impl SweepPlan {
    pub fn points(&self) -> usize {
        self.parameters.first().map_or(0, |p| p.values.len())
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let n = self.points();
        if self.parameters.is_empty() || n == 0 {
            return Err(SweepError::Plan("no parameter values".into()));
        }
        for p in &self.parameters {
            if p.values.len() != n {
                return Err(SweepError::Plan(format!(
                    "parameter {} has {} values, expected {n}",
                    p.parameter.name(),
                    p.values.len()
                )));
            }
            let floor = if p.parameter.is_geometric() { 0.0 } else { 1.0 };
            if let Some(v) = p
                .values
                .iter()
                .find(|v| !(v.is_finite() && **v > floor || **v == floor && floor == 1.0))
            {
                return Err(SweepError::Plan(format!(
                    "parameter {} has invalid value {v}",
                    p.parameter.name()
                )));
            }
        }
        Ok(())
    }

    /// Structure at sweep point `i`.
    pub fn spec_at(&self, i: usize) -> Result<StructureSpec, SweepError> {
        let mut spec = self.base.clone();
        if self.hold_envelope && spec.envelope_width.is_none() {
            spec.hold_envelope();
        }
        for p in &self.parameters {
            let v = *p
                .values
                .get(i)
                .ok_or_else(|| SweepError::Plan(format!("no sweep point {i}")))?;
            p.parameter.apply(&mut spec, v)?;
        }
        Ok(spec)
    }
}

/// `nominal·(1 + p/100)` for `p = −span, −span + step, …, +span`.
pub fn plan_from_range(nominal: f64, span: f64, step: f64) -> Result<Vec<f64>, SweepError> {
    if span == 0.0 {
        return Ok(vec![nominal]);
    }
    if !(step > 0.0 && span > 0.0) {
        return Err(SweepError::Plan(format!(
            "span {span} and step {step} must be positive"
        )));
    }
    let intervals = 2.0 * span / step;
    let count = intervals.round();
    if (intervals - count).abs() > 1e-9 * intervals.max(1.0) {
        return Err(SweepError::Plan(format!(
            "step {step}% does not divide the ±{span}% range"
        )));
    }
    Ok((0..=count as usize)
        .map(|k| nominal * (1.0 + (-span + k as f64 * step) / 100.0))
        .collect())
}

fn equidistant(values: &[f64]) -> bool {
    if values.len() < 3 {
        return true;
    }
    let step = values[1] - values[0];
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    values
        .windows(2)
        .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * scale)
}

/// Sweep point used for the pre-solve: the median of an equidistant value
/// list, otherwise the value closest to the arithmetic mean. Joint sweeps
/// use the first parameter's values.
pub fn presolve_point(plan: &SweepPlan) -> usize {
    let values = match plan.parameters.first() {
        Some(p) if !p.values.is_empty() => &p.values,
        _ => return 0,
    };
    if equidistant(values) {
        return (values.len() - 1) / 2;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - mean).abs().total_cmp(&(b.1 - mean).abs()))
        .map_or(0, |(i, _)| i)
}

/// Fixed initial counts plus the bisection rounds found at the pre-solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecipe {
    pub initial: InitialPlan,
    pub rounds: Vec<BTreeSet<usize>>,
}

impl RefinementRecipe {
    pub fn mesh_for(&self, spec: &StructureSpec) -> Result<Mesh, SweepError> {
        let g = geometry::build(spec)?;
        let mut mesh = discretize(&g, &self.initial.plan(&g));
        for ids in &self.rounds {
            mesh = refine(&mesh, ids);
        }
        Ok(mesh)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Pre-solve, change mask, partial reassembly.
    I,
    /// Full reassembly at every point.
    II,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointResult {
    pub index: usize,
    /// Value of each swept parameter at this point.
    pub values: Vec<f64>,
    pub segments: usize,
    pub capacitance: CapacitanceMatrix,
    pub seconds: f64,
    /// Bit-pattern hash of the system matrix used at this point.
    pub system_digest: u64,
    /// True when the system was built by partial reassembly.
    pub partial: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub method: Method,
    pub points: Vec<PointResult>,
    /// Pre-solve time (Method I only, otherwise 0).
    pub presolve_seconds: f64,
    /// Mean time per sweep point.
    pub t_mid: f64,
    /// Sum of point times plus the pre-solve.
    pub t_tot: f64,
    /// Unchanged fraction of the change mask (Method I with ≥ 2 points).
    pub unchanged_fraction: Option<f64>,
    #[serde(skip)]
    pub mask: Option<ChangeMask>,
}

/// A prepared sweep: the plan plus the refinement recipe from its
/// pre-solve.
pub struct Sweep {
    pub plan: SweepPlan,
    pub recipe: RefinementRecipe,
    pub presolve_seconds: f64,
}

impl Sweep {
    /// Pre-solve at [`presolve_point`] with the fixed initial counts and
    /// record which segments to bisect. Runs up to `config.max_iters`
    /// adaptive rounds, stopping early once `‖C‖_F` settles within
    /// `config.tol`.
    pub fn prepare(plan: &SweepPlan, config: &RefinementConfig) -> Result<Self, SweepError> {
        plan.validate()?;
        config.validate()?;
        if matches!(config.strategy, Strategy::Uniform { .. }) {
            return Err(SweepError::Plan(
                "sweeps need fixed per-edge segment counts; uniform t/n plans change N with the geometry".into(),
            ));
        }
        // Every point must build before any time is spent solving.
        for i in 0..plan.points() {
            geometry::build(&plan.spec_at(i)?)?;
        }
        let start = Instant::now();
        let spec = plan.spec_at(presolve_point(plan))?;
        let g = geometry::build(&spec)?;
        let mesh = discretize(&g, &config.initial.plan(&g));
        let report = converge_adaptive(mesh, config.strategy, config)?;
        let presolve_seconds = start.elapsed().as_secs_f64();
        Ok(Self {
            plan: plan.clone(),
            recipe: RefinementRecipe {
                initial: config.initial,
                rounds: report.history,
            },
            presolve_seconds,
        })
    }

    pub fn mesh_at(&self, i: usize) -> Result<Mesh, SweepError> {
        self.recipe.mesh_for(&self.plan.spec_at(i)?)
    }

    /// Entries whose inputs change anywhere in the sweep relative to the
    /// first point (see [`input_change_mask`]).
    pub fn input_mask(&self) -> Result<ChangeMask, SweepError> {
        let first = self.mesh_at(0)?;
        let others = (1..self.plan.points())
            .map(|i| self.mesh_at(i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(input_change_mask(&first, &others)?)
    }

    pub fn run(&self, method: Method) -> Result<SweepResult, SweepError> {
        let n_par = self.plan.points();
        let mut points = Vec::with_capacity(n_par);
        // Method I keeps one working matrix. After the first two points it
        // only differs from either of them in masked entries, so later points
        // overwrite exactly those.
        let mut work: Option<SystemMatrix> = None;
        let mut mask: Option<ChangeMask> = None;
        let mut expected = None;
        for i in 0..n_par {
            let start = Instant::now();
            let mesh = self.mesh_at(i)?;
            let expected_n = *expected.get_or_insert(mesh.len());
            if mesh.len() != expected_n {
                return Err(SweepError::Drift {
                    point: i,
                    got: mesh.len(),
                    expected: expected_n,
                });
            }
            let mut fresh = None;
            let partial = match (method, i) {
                (Method::II, _) => {
                    fresh = Some(assemble(&mesh));
                    false
                }
                (Method::I, 0) => {
                    work = Some(assemble(&mesh));
                    false
                }
                (Method::I, 1) => {
                    let next = assemble(&mesh);
                    let by_value = diff_mask(work.as_ref().expect("first system"), &next)?;
                    mask = Some(by_value.union(&self.input_mask()?)?);
                    work = Some(next);
                    false
                }
                (Method::I, _) => {
                    reassemble_in_place(
                        work.as_mut().expect("working system"),
                        &mesh,
                        mask.as_ref().expect("change mask"),
                    )?;
                    true
                }
            };
            let system = fresh.as_ref().or(work.as_ref()).expect("assembled system");
            let (_, mut capacitance) = solve_assembled(&mesh, system)?;
            capacitance.method = match method {
                Method::I => "sweep method I".into(),
                Method::II => "sweep method II".into(),
            };
            capacitance.plan = format!(
                "initial {:?} + {} rounds",
                self.recipe.initial,
                self.recipe.rounds.len()
            );
            let seconds = start.elapsed().as_secs_f64();
            points.push(PointResult {
                index: i,
                values: self.plan.parameters.iter().map(|p| p.values[i]).collect(),
                segments: mesh.len(),
                capacitance,
                seconds,
                system_digest: system.digest(),
                partial,
            });
        }
        let presolve_seconds = match method {
            Method::I => self.presolve_seconds,
            Method::II => 0.0,
        };
        let sum: f64 = points.iter().map(|p| p.seconds).sum();
        Ok(SweepResult {
            method,
            t_mid: sum / n_par as f64,
            t_tot: sum + presolve_seconds,
            presolve_seconds,
            unchanged_fraction: mask.as_ref().map(ChangeMask::unchanged_fraction),
            mask,
            points,
        })
    }
}

/// Method I: pre-solve, two full assemblies, then masked reassembly.
pub fn run_method1(plan: &SweepPlan, config: &RefinementConfig) -> Result<SweepResult, SweepError> {
    Sweep::prepare(plan, config)?.run(Method::I)
}

/// Method II: full reassembly at every point on the same meshes. The
/// refinement recipe is derived the same way but its cost is not charged.
pub fn run_method2(plan: &SweepPlan, config: &RefinementConfig) -> Result<SweepResult, SweepError> {
    Sweep::prepare(plan, config)?.run(Method::II)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `(t_tot^II − t_tot^I) / t_tot^II`, percent.
    pub savings_percent: f64,
    /// Largest per-point `‖C_I − C_II‖_F / ‖C_II‖_F`.
    pub max_relative_difference: f64,
    /// Every per-point system matrix hashed identically.
    pub systems_identical: bool,
}

pub fn savings_percent(t_tot_1: f64, t_tot_2: f64) -> f64 {
    100.0 * (t_tot_2 - t_tot_1) / t_tot_2
}

pub fn compare(r1: &SweepResult, r2: &SweepResult) -> Result<Comparison, SweepError> {
    if r1.points.len() != r2.points.len()
        || r1
            .points
            .iter()
            .zip(&r2.points)
            .any(|(a, b)| a.values != b.values)
    {
        return Err(SweepError::Plan(
            "results come from different sweep plans".into(),
        ));
    }
    let mut worst = 0.0f64;
    let mut identical = true;
    for (a, b) in r1.points.iter().zip(&r2.points) {
        let num: f64 = a
            .capacitance
            .values
            .iter()
            .zip(&b.capacitance.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(num / b.capacitance.frobenius());
        identical &= a.system_digest == b.system_digest;
    }
    Ok(Comparison {
        savings_percent: savings_percent(r1.t_tot, r2.t_tot),
        max_relative_difference: worst,
        systems_identical: identical,
    })
}
