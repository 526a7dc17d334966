//! Config-driven batch runs.
//!
//! A run is described by a TOML file. Every length is in millimetres.
//!
//! ```toml
//! mode = "solve"            # optional when the subcommand names it
//!
//! [structure]
//! family = "mplp1"          # mplp1 | mplp2 | generic
//! conductors = 8            # mplp1 only
//! thickness = 0.005
//! # Optional overrides (required for generic):
//! # width = 0.05 / widths = [...], gap = 0.05 / gaps = [...], margin = 0.15
//! # layers = [{ thickness = 0.05, eps = 3.8 }, ...], base_layer = 0
//! # ground_thickness = 0.005, envelope_width = 1.05
//!
//! [refinement]
//! strategy = "uniform"      # uniform | adaptive25 | method1
//! n = 3                     # uniform t/n
//! k = 75.0                  # method1 quota
//! tol = 0.01
//! max_iters = 10
//! initial_vertical = 3
//! initial_horizontal = 40
//!
//! [sweep]
//! parameters = ["eps2"]     # t, w, s, epsN; several = joint sweep
//! span = 14.0               # percent
//! step = 2.0                # percent
//! # values = [...]          # explicit list instead of span/step (one parameter)
//! conductors = [6, 8, 10]   # optional, one timing row per count
//! hold_envelope = true
//!
//! [diffmask]
//! points = [0, 1]
//!
//! [audit]
//! input = "matrix.csv"      # relative to the config file
//! sym_tol = 1e-3
//! sign_slack = 0.0
//!
//! [output]
//! dir = "out"
//! iteration_csv = false
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, discretize, Family, GeometryError, Layer, StructureSpec, MM};
use crate::io::{self, IoError, TimingRow};
use crate::physicality::{
    audit, audit_first_row, audit_rows, AuditError, AuditOptions, PhysicalityReport,
};
use crate::refine::{converge, uniform_plan, InitialPlan, RefineError, RefinementConfig, Strategy};
use crate::sweep::{
    self, plan_from_range, Method, Parameter, ParameterRange, SweepError, SweepPlan, SweepResult,
};
use crate::system::{analyze, assemble, diff_mask, CapacitanceMatrix, SolveError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Solve,
    Converge,
    Sweep,
    Audit,
    Diffmask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MethodSelection {
    One,
    Two,
    #[default]
    Both,
}

impl MethodSelection {
    fn methods(self) -> Vec<Method> {
        match self {
            Self::One => vec![Method::I],
            Self::Two => vec![Method::II],
            Self::Both => vec![Method::I, Method::II],
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    structure: Option<RawStructure>,
    #[serde(default)]
    refinement: RawRefinement,
    sweep: Option<RawSweep>,
    diffmask: Option<RawDiffmask>,
    audit: Option<RawAudit>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStructure {
    family: Family,
    conductors: Option<usize>,
    thickness: Option<f64>,
    width: Option<f64>,
    widths: Option<Vec<f64>>,
    gap: Option<f64>,
    gaps: Option<Vec<f64>>,
    margin: Option<f64>,
    layers: Option<Vec<RawLayer>>,
    base_layer: Option<usize>,
    ground_thickness: Option<f64>,
    envelope_width: Option<f64>,
}

#[derive(Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    thickness: f64,
    eps: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum RawStrategy {
    Uniform,
    Adaptive25,
    Method1,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRefinement {
    #[serde(default = "default_strategy")]
    strategy: RawStrategy,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default = "default_k")]
    k: f64,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_max_iters")]
    max_iters: usize,
    #[serde(default = "default_vertical")]
    initial_vertical: usize,
    #[serde(default = "default_horizontal")]
    initial_horizontal: usize,
}

fn default_strategy() -> RawStrategy {
    RawStrategy::Method1
}
fn default_n() -> usize {
    3
}
fn default_k() -> f64 {
    75.0
}
fn default_tol() -> f64 {
    0.01
}
fn default_max_iters() -> usize {
    10
}
fn default_vertical() -> usize {
    InitialPlan::default().vertical
}
fn default_horizontal() -> usize {
    InitialPlan::default().horizontal
}

impl Default for RawRefinement {
    fn default() -> Self {
        Self {
            strategy: default_strategy(),
            n: default_n(),
            k: default_k(),
            tol: default_tol(),
            max_iters: default_max_iters(),
            initial_vertical: default_vertical(),
            initial_horizontal: default_horizontal(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameters: Vec<String>,
    span: Option<f64>,
    step: Option<f64>,
    values: Option<Vec<f64>>,
    conductors: Option<Vec<usize>>,
    #[serde(default = "default_true")]
    hold_envelope: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiffmask {
    points: [usize; 2],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAudit {
    input: PathBuf,
    #[serde(default = "default_sym_tol")]
    sym_tol: f64,
    #[serde(default)]
    sign_slack: f64,
}

fn default_sym_tol() -> f64 {
    AuditOptions::default().sym_tol
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    #[serde(default)]
    iteration_csv: bool,
}

/// Sweep section after validation.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSettings {
    pub plan: SweepPlan,
    /// Conductor counts to repeat the sweep for; empty means the base
    /// structure only.
    pub conductor_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditSettings {
    pub input: PathBuf,
    pub options: AuditOptions,
}

/// A validated run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub structure: Option<StructureSpec>,
    pub refinement: RefinementConfig,
    pub sweep: Option<SweepSettings>,
    pub diffmask_points: [usize; 2],
    pub audit: Option<AuditSettings>,
    pub out_dir: PathBuf,
    pub iteration_csv: bool,
    pub methods: MethodSelection,
    pub fail_on_nonphysical: bool,
}

fn config_error(origin: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: origin.to_string(),
        message: message.into(),
    }
}

fn mm(v: f64) -> f64 {
    v * MM
}

fn structure_spec(raw: &RawStructure, origin: &str) -> Result<StructureSpec, CliError> {
    let err = |m: String| config_error(origin, format!("[structure] {m}"));
    let mut spec = match raw.family {
        Family::Mplp1 => {
            let m = raw
                .conductors
                .ok_or_else(|| err("missing field `conductors` for family mplp1".into()))?;
            let t = raw
                .thickness
                .ok_or_else(|| err("missing field `thickness`".into()))?;
            StructureSpec::mplp1(m, mm(t))
        }
        Family::Mplp2 => {
            if raw.conductors.is_some_and(|m| m != 10) {
                return Err(err("family mplp2 has exactly 10 conductors".into()));
            }
            StructureSpec::mplp2()
        }
        Family::Generic => {
            let widths = raw
                .widths
                .as_ref()
                .ok_or_else(|| err("missing field `widths` for family generic".into()))?;
            let t = raw
                .thickness
                .ok_or_else(|| err("missing field `thickness`".into()))?;
            if raw.layers.is_none() {
                return Err(err("missing field `layers` for family generic".into()));
            }
            StructureSpec {
                family: Family::Generic,
                thickness: mm(t),
                widths: widths.iter().map(|w| mm(*w)).collect(),
                gaps: Vec::new(),
                margin: mm(raw
                    .margin
                    .ok_or_else(|| err("missing field `margin` for family generic".into()))?),
                layers: Vec::new(),
                base_layer: 0,
                ground_thickness: mm(t),
                envelope_width: None,
            }
        }
    };
    if let Some(t) = raw.thickness {
        spec.thickness = mm(t);
    }
    if raw.width.is_some() && raw.widths.is_some() {
        return Err(err("give either `width` or `widths`, not both".into()));
    }
    if raw.gap.is_some() && raw.gaps.is_some() {
        return Err(err("give either `gap` or `gaps`, not both".into()));
    }
    if let Some(w) = &raw.widths {
        spec.widths = w.iter().map(|v| mm(*v)).collect();
    }
    if let Some(w) = raw.width {
        spec.widths.iter_mut().for_each(|v| *v = mm(w));
    }
    let m = spec.widths.len();
    match (&raw.gaps, raw.gap) {
        (Some(g), _) => spec.gaps = g.iter().map(|v| mm(*v)).collect(),
        (None, Some(g)) => spec.gaps = vec![mm(g); m.saturating_sub(1)],
        (None, None) if raw.family == Family::Generic => {
            return Err(err(
                "missing field `gaps` (or `gap`) for family generic".into()
            ))
        }
        _ => {}
    }
    if let Some(d) = raw.margin {
        spec.margin = mm(d);
    }
    if let Some(layers) = &raw.layers {
        spec.layers = layers
            .iter()
            .map(|l| Layer {
                thickness: mm(l.thickness),
                eps: l.eps,
            })
            .collect();
    }
    if let Some(b) = raw.base_layer {
        spec.base_layer = b;
    }
    if let Some(g) = raw.ground_thickness {
        spec.ground_thickness = mm(g);
    }
    if let Some(l) = raw.envelope_width {
        spec.envelope_width = Some(mm(l));
    }
    spec.validate()
        .map_err(|e| err(format!("inconsistent geometry: {e}")))?;
    Ok(spec)
}

fn refinement_config(raw: &RawRefinement, origin: &str) -> Result<RefinementConfig, CliError> {
    let config = RefinementConfig {
        tol: raw.tol,
        max_iters: raw.max_iters,
        strategy: match raw.strategy {
            RawStrategy::Uniform => Strategy::Uniform { n: raw.n },
            RawStrategy::Adaptive25 => Strategy::AdaptiveTop25,
            RawStrategy::Method1 => Strategy::MethodI { k: raw.k },
        },
        initial: InitialPlan {
            vertical: raw.initial_vertical,
            horizontal: raw.initial_horizontal,
        },
    };
    config
        .validate()
        .map_err(|e| config_error(origin, format!("[refinement] {e}")))?;
    Ok(config)
}

fn sweep_settings(
    raw: &RawSweep,
    base: &StructureSpec,
    origin: &str,
) -> Result<SweepSettings, CliError> {
    let err = |m: String| config_error(origin, format!("[sweep] {m}"));
    if raw.parameters.is_empty() {
        return Err(err("`parameters` must name at least one parameter".into()));
    }
    let mut ranges = Vec::new();
    for name in &raw.parameters {
        let parameter = Parameter::parse(name).ok_or_else(|| {
            err(format!(
                "unknown parameter '{name}' (expected t, w, s or epsN)"
            ))
        })?;
        let nominal = parameter.nominal(base).ok_or_else(|| {
            err(format!(
                "parameter '{name}' does not exist in this structure"
            ))
        })?;
        let values = match (&raw.values, raw.span, raw.step) {
            (Some(v), None, None) => {
                if raw.parameters.len() != 1 {
                    return Err(err("explicit `values` need exactly one parameter".into()));
                }
                let scale = if parameter.is_geometric() { MM } else { 1.0 };
                v.iter().map(|x| x * scale).collect()
            }
            (None, Some(span), Some(step)) => {
                plan_from_range(nominal, span, step).map_err(|e| err(e.to_string()))?
            }
            _ => return Err(err("give either `values` or both `span` and `step`".into())),
        };
        ranges.push(ParameterRange { parameter, values });
    }
    let plan = SweepPlan {
        base: base.clone(),
        parameters: ranges,
        hold_envelope: raw.hold_envelope,
    };
    plan.validate().map_err(|e| err(e.to_string()))?;
    let conductor_counts = raw.conductors.clone().unwrap_or_default();
    if conductor_counts.contains(&0) {
        return Err(err("conductor counts must be positive".into()));
    }
    Ok(SweepSettings {
        plan,
        conductor_counts,
    })
}

/// Parse a config, taking the mode from its `mode` key.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    parse_config_as(path, None)
}

/// Parse a config; `mode` (from the subcommand) must agree with any
/// `mode` key in the file.
pub fn parse_config_as(path: &Path, mode: Option<Mode>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, &path.display().to_string(), base_dir, mode)
}

/// Parse config text. Relative paths resolve against `base_dir`.
pub fn parse_config_str(
    text: &str,
    origin: &str,
    base_dir: &Path,
    mode: Option<Mode>,
) -> Result<RunConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| config_error(origin, e.to_string()))?;
    let mode = match (raw.mode, mode) {
        (Some(a), Some(b)) if a != b => {
            return Err(config_error(
                origin,
                format!("file declares mode {a:?} but the command asks for {b:?}"),
            ))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(config_error(origin, "missing field `mode`")),
    };
    let needs_structure = mode != Mode::Audit;
    let structure = match &raw.structure {
        Some(s) => Some(structure_spec(s, origin)?),
        None if needs_structure => return Err(config_error(origin, "missing table `[structure]`")),
        None => None,
    };
    let refinement = refinement_config(&raw.refinement, origin)?;
    let sweep = match (&raw.sweep, &structure) {
        (Some(s), Some(base)) => Some(sweep_settings(s, base, origin)?),
        (None, _) if matches!(mode, Mode::Sweep | Mode::Diffmask) => {
            return Err(config_error(origin, "missing table `[sweep]`"))
        }
        _ => None,
    };
    let diffmask_points = raw.diffmask.as_ref().map_or([0, 1], |d| d.points);
    if let Some(s) = &sweep {
        if let Some(p) = diffmask_points.iter().find(|p| **p >= s.plan.points()) {
            return Err(config_error(
                origin,
                format!(
                    "[diffmask] point {p} outside the {}-point sweep",
                    s.plan.points()
                ),
            ));
        }
    }
    if matches!(mode, Mode::Sweep | Mode::Diffmask)
        && matches!(refinement.strategy, Strategy::Uniform { .. })
    {
        return Err(config_error(
            origin,
            "[refinement] sweeps need strategy adaptive25 or method1 so the segment count stays fixed",
        ));
    }
    let audit = match &raw.audit {
        Some(a) => {
            let options = AuditOptions {
                sym_tol: a.sym_tol,
                sign_slack: a.sign_slack,
            };
            if !(options.sym_tol >= 0.0 && options.sign_slack >= 0.0) {
                return Err(config_error(
                    origin,
                    "[audit] tolerances must be non-negative",
                ));
            }
            Some(AuditSettings {
                input: base_dir.join(&a.input),
                options,
            })
        }
        None if mode == Mode::Audit => return Err(config_error(origin, "missing table `[audit]`")),
        None => None,
    };
    Ok(RunConfig {
        mode,
        structure,
        refinement,
        sweep,
        diffmask_points,
        audit,
        out_dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("out")),
        iteration_csv: raw.output.iteration_csv,
        methods: MethodSelection::default(),
        fail_on_nonphysical: false,
    })
}

/// What a run produced, for the exit status and the terminal.
#[derive(Clone, Debug)]
pub struct Outcome {
    /// `Some(false)` when an audited matrix is not physical.
    pub physical: Option<bool>,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    /// Process exit status under the run's settings.
    pub fn exit_code(&self, fail_on_nonphysical: bool) -> i32 {
        if fail_on_nonphysical && self.physical == Some(false) {
            1
        } else {
            0
        }
    }
}

#[derive(Serialize)]
struct MatrixReport<'a> {
    n: usize,
    n_c: usize,
    method: &'a str,
    plan: &'a str,
    capacitance_pf_per_m: Vec<Vec<f64>>,
    physicality: &'a PhysicalityReport,
    violations: Vec<String>,
}

fn pf_rows(c: &CapacitanceMatrix) -> Vec<Vec<f64>> {
    c.rows()
        .into_iter()
        .map(|r| r.into_iter().map(|v| v * 1e12).collect())
        .collect()
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        io::write_file(&path, bytes)?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.put(name, io::json_string(value)?)
    }
}

fn summary_line(out: &mut String, c: &CapacitanceMatrix, report: &PhysicalityReport) {
    let _ = writeln!(
        out,
        "N = {}, N_C = {}, method: {}",
        c.mesh_size, c.size, c.method
    );
    let _ = writeln!(out, "C11 = {:.4} pF/m", c.pf(0, 0));
    if c.size > 1 {
        let _ = writeln!(out, "C12 = {:.4} pF/m", c.pf(0, 1));
    }
    let _ = writeln!(
        out,
        "physical: {}",
        if report.physical { "yes" } else { "no" }
    );
    for v in report.describe().iter().take(8) {
        let _ = writeln!(out, "  {v}");
    }
}

fn matrix_report<'a>(c: &'a CapacitanceMatrix, report: &'a PhysicalityReport) -> MatrixReport<'a> {
    MatrixReport {
        n: c.mesh_size,
        n_c: c.size,
        method: &c.method,
        plan: &c.plan,
        capacitance_pf_per_m: pf_rows(c),
        physicality: report,
        violations: report.describe(),
    }
}

fn structure(config: &RunConfig) -> &StructureSpec {
    config
        .structure
        .as_ref()
        .expect("validated configs carry a structure for this mode")
}

fn run_solve(config: &RunConfig, w: &mut Writer) -> Result<Outcome, CliError> {
    let spec = structure(config);
    let start = Instant::now();
    let g = geometry::build(spec)?;
    let (plan, label) = match config.refinement.strategy {
        Strategy::Uniform { n } => (
            uniform_plan(&g, spec.thickness, n),
            format!("uniform t/{n}"),
        ),
        _ => (
            config.refinement.initial.plan(&g),
            format!(
                "initial {}/{} per edge",
                config.refinement.initial.vertical, config.refinement.initial.horizontal
            ),
        ),
    };
    let mesh = discretize(&g, &plan);
    let mut c = analyze(&mesh)?.capacitance;
    c.method = label.clone();
    c.plan = label;
    let seconds = start.elapsed().as_secs_f64();
    let report = audit(&c, &AuditOptions::default());
    w.put("capacitance.csv", io::matrix_csv(&c))?;
    w.json("report.json", &matrix_report(&c, &report))?;
    w.json(
        "timings.json",
        &BTreeMap::from([("solve_seconds", seconds)]),
    )?;
    let mut summary = String::new();
    summary_line(&mut summary, &c, &report);
    let _ = writeln!(summary, "time: {seconds:.3} s");
    Ok(Outcome {
        physical: Some(report.physical),
        summary,
        files: Vec::new(),
    })
}

fn run_converge(config: &RunConfig, w: &mut Writer) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let result = converge(structure(config), &config.refinement)?;
    let seconds = start.elapsed().as_secs_f64();
    let c = &result.capacitance;
    let report = audit(c, &AuditOptions::default());
    w.put("capacitance.csv", io::matrix_csv(c))?;
    w.json("convergence.json", &result)?;
    w.json("report.json", &matrix_report(c, &report))?;
    if config.iteration_csv {
        for (i, m) in result.matrices.iter().enumerate() {
            w.put(
                &format!("iterations/iteration_{i:02}.csv"),
                io::matrix_csv(m),
            )?;
        }
    }
    w.json(
        "timings.json",
        &BTreeMap::from([("converge_seconds", seconds)]),
    )?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{} after {} refinement steps (tol {})",
        if result.converged {
            "converged"
        } else {
            "NOT converged"
        },
        result.steps(),
        result.tol
    );
    summary_line(&mut summary, c, &report);
    let _ = writeln!(summary, "time: {seconds:.3} s");
    Ok(Outcome {
        physical: Some(report.physical),
        summary,
        files: Vec::new(),
    })
}

#[derive(Serialize)]
struct SweepPointSummary {
    index: usize,
    /// Parameter values in config units: mm for lengths.
    values_config_units: Vec<f64>,
    n: usize,
    c11_pf_per_m: f64,
    partial: bool,
    system_digest: String,
}

#[derive(Serialize)]
struct SweepCaseSummary {
    conductors: usize,
    parameters: Vec<String>,
    points: usize,
    n: usize,
    refinement_rounds: usize,
    unchanged_fraction: Option<f64>,
    method_1: Option<Vec<SweepPointSummary>>,
    method_2: Option<Vec<SweepPointSummary>>,
    systems_identical: Option<bool>,
    max_relative_difference: Option<f64>,
    all_physical: bool,
}

fn point_summaries(r: &SweepResult, parameters: &[ParameterRange]) -> Vec<SweepPointSummary> {
    let unit = |i: usize| {
        if parameters[i].parameter.is_geometric() {
            MM
        } else {
            1.0
        }
    };
    r.points
        .iter()
        .map(|p| SweepPointSummary {
            index: p.index,
            values_config_units: p
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| v / unit(i))
                .collect(),
            n: p.segments,
            c11_pf_per_m: p.capacitance.pf(0, 0),
            partial: p.partial,
            system_digest: format!("{:016x}", p.system_digest),
        })
        .collect()
}

fn with_conductors(base: &StructureSpec, m: usize) -> StructureSpec {
    let mut spec = base.clone();
    let w = spec.widths[0];
    let s = spec.gaps.first().copied().unwrap_or(w);
    spec.widths = vec![w; m];
    spec.gaps = vec![s; m - 1];
    spec
}

fn sweep_cases(settings: &SweepSettings) -> Vec<(String, SweepPlan)> {
    if settings.conductor_counts.is_empty() {
        let label = settings
            .plan
            .parameters
            .iter()
            .map(|p| p.parameter.name())
            .collect::<Vec<_>>()
            .join("+");
        return vec![(label, settings.plan.clone())];
    }
    settings
        .conductor_counts
        .iter()
        .map(|&m| {
            let mut plan = settings.plan.clone();
            plan.base = with_conductors(&settings.plan.base, m);
            (m.to_string(), plan)
        })
        .collect()
}

fn run_sweep(config: &RunConfig, w: &mut Writer) -> Result<Outcome, CliError> {
    let settings = config.sweep.as_ref().expect("validated sweep config");
    let methods = config.methods.methods();
    let mut timing_rows = Vec::new();
    let mut cases = Vec::new();
    let mut timings = BTreeMap::new();
    let mut summary = String::new();
    let mut all_physical = true;
    for (label, plan) in sweep_cases(settings) {
        let prepared = sweep::Sweep::prepare(&plan, &config.refinement)?;
        let mut r1 = None;
        let mut r2 = None;
        for &method in &methods {
            let result = prepared.run(method)?;
            let tag = match method {
                Method::I => "method1",
                Method::II => "method2",
            };
            for p in &result.points {
                w.put(
                    &format!("{label}/{tag}/point_{:02}.csv", p.index),
                    io::matrix_csv(&p.capacitance),
                )?;
            }
            if let Some(mask) = &result.mask {
                w.put(&format!("{label}/mask.pbm"), io::mask_pbm(mask))?;
            }
            match method {
                Method::I => r1 = Some(result),
                Method::II => r2 = Some(result),
            }
        }
        let comparison = match (&r1, &r2) {
            (Some(a), Some(b)) => Some(sweep::compare(a, b)?),
            _ => None,
        };
        let any = r1
            .as_ref()
            .or(r2.as_ref())
            .expect("at least one method ran");
        let physical = any
            .points
            .iter()
            .all(|p| audit(&p.capacitance, &AuditOptions::default()).physical);
        all_physical &= physical;
        timing_rows.push(TimingRow {
            label: label.clone(),
            t_mid_1: r1.as_ref().map(|r| r.t_mid),
            t_tot_1: r1.as_ref().map(|r| r.t_tot),
            t_mid_2: r2.as_ref().map(|r| r.t_mid),
            t_tot_2: r2.as_ref().map(|r| r.t_tot),
            savings_percent: comparison.map(|c| c.savings_percent),
        });
        timings.insert(
            label.clone(),
            BTreeMap::from([
                ("presolve_seconds", Some(prepared.presolve_seconds)),
                ("t_tot_I", r1.as_ref().map(|r| r.t_tot)),
                ("t_tot_II", r2.as_ref().map(|r| r.t_tot)),
            ]),
        );
        let _ = writeln!(
            summary,
            "case {label}: {} points, N = {}, C11 at point 0 = {:.4} pF/m, physical: {}{}{}",
            any.points.len(),
            any.points[0].segments,
            any.points[0].capacitance.pf(0, 0),
            if physical { "yes" } else { "no" },
            r1.as_ref()
                .and_then(|r| r.unchanged_fraction)
                .map_or(String::new(), |f| format!(", unchanged {:.1}%", 100.0 * f)),
            comparison.map_or(String::new(), |c| format!(
                ", savings {:.1}%, identical: {}",
                c.savings_percent, c.systems_identical
            )),
        );
        cases.push(SweepCaseSummary {
            conductors: plan.base.conductor_count(),
            parameters: plan.parameters.iter().map(|p| p.parameter.name()).collect(),
            points: any.points.len(),
            n: any.points[0].segments,
            refinement_rounds: prepared.recipe.rounds.len(),
            unchanged_fraction: r1.as_ref().and_then(|r| r.unchanged_fraction),
            method_1: r1.as_ref().map(|r| point_summaries(r, &plan.parameters)),
            method_2: r2.as_ref().map(|r| point_summaries(r, &plan.parameters)),
            systems_identical: comparison.map(|c| c.systems_identical),
            max_relative_difference: comparison.map(|c| c.max_relative_difference),
            all_physical: physical,
        });
    }
    w.json("sweep.json", &cases)?;
    w.put("timings.csv", io::timing_csv(&timing_rows))?;
    w.json("timings.json", &timings)?;
    Ok(Outcome {
        physical: Some(all_physical),
        summary,
        files: Vec::new(),
    })
}

#[derive(Serialize)]
struct MaskSummary {
    points: [usize; 2],
    n: usize,
    changed: usize,
    unchanged_fraction: f64,
}

fn run_diffmask(config: &RunConfig, w: &mut Writer) -> Result<Outcome, CliError> {
    let settings = config.sweep.as_ref().expect("validated sweep config");
    let prepared = sweep::Sweep::prepare(&settings.plan, &config.refinement)?;
    let [a, b] = config.diffmask_points;
    let sa = assemble(&prepared.mesh_at(a)?);
    let sb = assemble(&prepared.mesh_at(b)?);
    let mask = diff_mask(&sa, &sb)?;
    let summary = MaskSummary {
        points: [a, b],
        n: mask.n(),
        changed: mask.changed(),
        unchanged_fraction: mask.unchanged_fraction(),
    };
    w.put("mask.pbm", io::mask_pbm(&mask))?;
    w.json("mask.json", &summary)?;
    Ok(Outcome {
        physical: None,
        summary: format!(
            "N = {}, changed entries {} ({:.1}% unchanged)\n",
            summary.n,
            summary.changed,
            100.0 * summary.unchanged_fraction
        ),
        files: Vec::new(),
    })
}

#[derive(Serialize)]
struct AuditOutput<'a> {
    input: String,
    rows: usize,
    columns: usize,
    scope: &'static str,
    report: &'a PhysicalityReport,
    violations: Vec<String>,
}

/// Audit rows read from CSV: a single row is audited as a first row,
/// anything else must be a square matrix.
pub fn audit_csv_rows(
    rows: &[Vec<f64>],
    options: &AuditOptions,
) -> Result<PhysicalityReport, CliError> {
    Ok(if rows.len() == 1 {
        audit_first_row(&rows[0], options)?
    } else {
        audit_rows(rows, options)?
    })
}

fn run_audit(config: &RunConfig, w: &mut Writer) -> Result<Outcome, CliError> {
    let settings = config.audit.as_ref().expect("validated audit config");
    let rows = io::read_rows(&settings.input)?;
    let report = audit_csv_rows(&rows, &settings.options)?;
    let output = AuditOutput {
        input: settings.input.display().to_string(),
        rows: rows.len(),
        columns: rows[0].len(),
        scope: if rows.len() == 1 {
            "first row"
        } else {
            "full matrix"
        },
        report: &report,
        violations: report.describe(),
    };
    w.json("audit.json", &output)?;
    let mut summary = format!(
        "{}: {} ({}), physical: {}\n",
        output.input,
        output.scope,
        rows[0].len(),
        if report.physical { "yes" } else { "no" }
    );
    for v in &output.violations {
        let _ = writeln!(summary, "  {v}");
    }
    Ok(Outcome {
        physical: Some(report.physical),
        summary,
        files: Vec::new(),
    })
}

/// Execute a validated run and write its outputs.
pub fn run(config: &RunConfig) -> Result<Outcome, CliError> {
    let mut w = Writer {
        dir: config.out_dir.clone(),
        files: Vec::new(),
    };
    let mut outcome = match config.mode {
        Mode::Solve => run_solve(config, &mut w)?,
        Mode::Converge => run_converge(config, &mut w)?,
        Mode::Sweep => run_sweep(config, &mut w)?,
        Mode::Audit => run_audit(config, &mut w)?,
        Mode::Diffmask => run_diffmask(config, &mut w)?,
    };
    outcome.files = w.files;
    Ok(outcome)
}
