//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations are exposed: a converged solve of a uniform microstrip
//! array, an audit of pasted CSV data, and the change-mask portrait between
//! the first two points of a parameter sweep. Results cross the boundary as
//! JSON strings, except the mask pixels which are passed as raw bytes.

use capmom::geometry::{build, discretize, SegmentationPlan, StructureSpec, MM};
use capmom::io::parse_rows;
use capmom::physicality::{audit, audit_first_row, audit_rows, AuditOptions};
use capmom::refine::{converge, RefinementConfig};
use capmom::sweep::{plan_from_range, Parameter, ParameterRange, SweepPlan};
use capmom::system::{assemble, diff_mask};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn array(m: usize, thickness_mm: f64, eps_middle: f64) -> Result<StructureSpec, JsError> {
    if !(1..=12).contains(&m) {
        return Err(JsError::new("conductor count must be between 1 and 12"));
    }
    let mut spec = StructureSpec::mplp1(m, thickness_mm * MM);
    spec.layers[1].eps = eps_middle;
    spec.validate().map_err(js_err)?;
    Ok(spec)
}

/// Converged per-excitation refinement for `m` lines; returns
/// `{ n, steps, converged, capacitance_pf_per_m, audit }`.
#[wasm_bindgen]
pub fn solve(m: usize, thickness_mm: f64, eps_middle: f64, k: f64) -> Result<String, JsError> {
    let spec = array(m, thickness_mm, eps_middle)?;
    let report = converge(&spec, &RefinementConfig::method1(k)).map_err(js_err)?;
    let c = &report.capacitance;
    let pf: Vec<Vec<f64>> = c
        .rows()
        .iter()
        .map(|r| r.iter().map(|v| v * 1e12).collect())
        .collect();
    let verdict = audit(c, &AuditOptions::default());
    Ok(json!({
        "n": c.mesh_size,
        "steps": report.steps(),
        "converged": report.converged,
        "capacitance_pf_per_m": pf,
        "physical": verdict.physical,
        "violations": verdict.describe(),
    })
    .to_string())
}

/// Audit CSV text: a single row is treated as the first row of a matrix,
/// several rows as a full square matrix.
#[wasm_bindgen]
pub fn audit_csv(text: &str) -> Result<String, JsError> {
    let rows = parse_rows(text, "input").map_err(js_err)?;
    let opts = AuditOptions::default();
    let report = if rows.len() == 1 {
        audit_first_row(&rows[0], &opts)
    } else {
        audit_rows(&rows, &opts)
    }
    .map_err(js_err)?;
    Ok(json!({
        "physical": report.physical,
        "violations": report.describe(),
        "report": report,
    })
    .to_string())
}

/// Entries of the system matrix that change between the first two points
/// of a ±`span_percent` sweep of `parameter` (`t`, `w`, `s` or `eps2`).
#[wasm_bindgen]
pub struct MaskPortrait {
    n: usize,
    pixels: Vec<u8>,
    unchanged_fraction: f64,
}

#[wasm_bindgen]
impl MaskPortrait {
    #[wasm_bindgen(getter)]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Row-major, one byte per entry, 1 = changed.
    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn unchanged_fraction(&self) -> f64 {
        self.unchanged_fraction
    }
}

#[wasm_bindgen]
pub fn mask_portrait(
    m: usize,
    thickness_mm: f64,
    parameter: &str,
    span_percent: f64,
    step_percent: f64,
) -> Result<MaskPortrait, JsError> {
    let base = array(m, thickness_mm, 2.0)?;
    let parameter = Parameter::parse(parameter)
        .ok_or_else(|| JsError::new("parameter must be t, w, s or epsN"))?;
    let nominal = parameter
        .nominal(&base)
        .ok_or_else(|| JsError::new("parameter does not exist in this structure"))?;
    let plan = SweepPlan {
        parameters: vec![ParameterRange {
            parameter,
            values: plan_from_range(nominal, span_percent, step_percent).map_err(js_err)?,
        }],
        base,
        hold_envelope: true,
    };
    if plan.points() < 2 {
        return Err(JsError::new("the sweep needs at least two points"));
    }
    let system = |i: usize| -> Result<_, JsError> {
        let g = build(&plan.spec_at(i).map_err(js_err)?).map_err(js_err)?;
        Ok(assemble(&discretize(
            &g,
            &SegmentationPlan::by_axis(&g, 3, 40),
        )))
    };
    let mask = diff_mask(&system(0)?, &system(1)?).map_err(js_err)?;
    Ok(MaskPortrait {
        n: mask.n(),
        pixels: mask.to_row_major(),
        unchanged_fraction: mask.unchanged_fraction(),
    })
}
