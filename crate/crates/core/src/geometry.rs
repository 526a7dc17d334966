//! Parametric microstrip cross-sections and their boundary discretization.
//!
//! A structure is a laterally finite dielectric stack resting on a finite
//! ground strip (conductor 0), with a row of rectangular signal conductors
//! sitting on top of one of the layers. Its boundary is described by a list
//! of straight oriented [`BoundaryEdge`]s. The unit normal of every edge is
//! the counter-clockwise rotation of its direction; conductor rectangles are
//! traversed clockwise so that their normals point out of the metal.
//!
//! Edge order is deterministic and depends only on the structure topology,
//! never on its dimensions. Two structures that differ only in dimensions
//! therefore yield meshes whose segments correspond position by position,
//! which is what the incremental sweep relies on.

use std::collections::BTreeSet;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One millimetre in metres.
pub const MM: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("structure needs at least one signal conductor")]
    NoConductors,
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: String, value: f64 },
    #[error("relative permittivity {name} must be finite and >= 1, got {value}")]
    BadPermittivity { name: String, value: f64 },
    #[error("expected {expected} gaps for {conductors} conductors, got {got}")]
    GapCount {
        expected: usize,
        conductors: usize,
        got: usize,
    },
    #[error("computed edge margin d = {margin:e} m is not positive; the envelope cannot hold these widths and gaps")]
    NegativeMargin { margin: f64 },
    #[error("gap {index} is {gap:e} m; conductors would overlap")]
    Overlap { index: usize, gap: f64 },
    #[error("conductor top at {top:e} m reaches the next layer interface at {interface:e} m")]
    ConductorTooThick { top: f64, interface: f64 },
    #[error("conductors rest on layer {index}, but the stack has only {layers} layers")]
    BaseLayer { index: usize, layers: usize },
    #[error("dielectric boundary between equal permittivities ({eps}) at {location}")]
    DegenerateInterface { eps: f64, location: String },
    #[error("{family:?} builder: {reason}")]
    WrongFamily { family: Family, reason: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise rotation by 90 degrees.
    pub fn rot90(self) -> Point {
        Point::new(-self.y, self.x)
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Metal face; `conductor` 0 is the grounded reference strip.
    ConductorDielectric {
        conductor: usize,
    },
    DielectricDielectric,
}

impl BoundaryKind {
    pub fn conductor(self) -> Option<usize> {
        match self {
            BoundaryKind::ConductorDielectric { conductor } => Some(conductor),
            BoundaryKind::DielectricDielectric => None,
        }
    }

    pub fn is_conductor(self) -> bool {
        matches!(self, BoundaryKind::ConductorDielectric { .. })
    }
}

/// A straight piece of the cross-section boundary.
///
/// `eps_pos` is the relative permittivity on the side the normal points
/// toward and `eps_neg` the one behind it. Conductor faces carry the
/// permittivity of the touching dielectric in both fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub start: Point,
    pub end: Point,
    pub kind: BoundaryKind,
    pub eps_pos: f64,
    pub eps_neg: f64,
}

impl BoundaryEdge {
    fn conductor(start: Point, end: Point, conductor: usize, eps: f64) -> Self {
        Self {
            start,
            end,
            kind: BoundaryKind::ConductorDielectric { conductor },
            eps_pos: eps,
            eps_neg: eps,
        }
    }

    fn dielectric(start: Point, end: Point, eps_pos: f64, eps_neg: f64) -> Self {
        Self {
            start,
            end,
            kind: BoundaryKind::DielectricDielectric,
            eps_pos,
            eps_neg,
        }
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn normal(&self) -> Point {
        let d = self.end - self.start;
        (d * (1.0 / d.norm())).rot90()
    }

    /// True when the edge is closer to horizontal than to vertical.
    pub fn is_horizontal(&self) -> bool {
        let d = self.end - self.start;
        d.x.abs() >= d.y.abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Three-layer stack, conductors on the first interface.
    Mplp1,
    /// Single substrate, conductors on top in air.
    Mplp2,
    Generic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub thickness: f64,
    pub eps: f64,
}

/// Dimensions of a microstrip cross-section, in metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub family: Family,
    /// Signal conductor thickness `t`.
    pub thickness: f64,
    /// Conductor widths, left to right.
    pub widths: Vec<f64>,
    /// Gaps between neighbouring conductors (`widths.len() - 1` entries).
    pub gaps: Vec<f64>,
    /// Edge margin `d` from the outermost conductor to the stack side.
    /// Ignored when `envelope_width` is set.
    pub margin: f64,
    /// Dielectric layers from bottom to top.
    pub layers: Vec<Layer>,
    /// Index of the layer whose top face carries the conductors.
    pub base_layer: usize,
    /// Thickness of the reference strip under the stack. Kept apart from
    /// `thickness` so that varying `t` never moves the ground.
    pub ground_thickness: f64,
    /// Fixed total width `l`; when set, the margin is derived from it.
    pub envelope_width: Option<f64>,
}

impl StructureSpec {
    /// Eight (or `m`) equal lines over a three-layer stack: w = s = 0.05 mm,
    /// d = 0.15 mm, h = (0.05, 0.15, 0.05) mm, eps = (3.8, 2, 3.8).
    pub fn mplp1(m: usize, thickness: f64) -> Self {
        Self {
            family: Family::Mplp1,
            thickness,
            widths: vec![0.05 * MM; m],
            gaps: vec![0.05 * MM; m.saturating_sub(1)],
            margin: 0.15 * MM,
            layers: vec![
                Layer {
                    thickness: 0.05 * MM,
                    eps: 3.8,
                },
                Layer {
                    thickness: 0.15 * MM,
                    eps: 2.0,
                },
                Layer {
                    thickness: 0.05 * MM,
                    eps: 3.8,
                },
            ],
            base_layer: 0,
            ground_thickness: thickness,
            envelope_width: None,
        }
    }

    /// Ten lines of unequal width on a 1 mm substrate with eps = 4.
    pub fn mplp2() -> Self {
        let widths = [0.2, 0.3, 0.4, 0.5, 0.6, 0.5, 0.4, 0.3, 0.2, 0.3];
        let gaps = [0.25, 0.3, 0.35, 0.25, 0.2, 0.25, 0.3, 0.35, 0.25];
        Self {
            family: Family::Mplp2,
            thickness: 0.02 * MM,
            widths: widths.iter().map(|w| w * MM).collect(),
            gaps: gaps.iter().map(|s| s * MM).collect(),
            margin: 2.48 * MM,
            layers: vec![Layer {
                thickness: 1.0 * MM,
                eps: 4.0,
            }],
            base_layer: 0,
            ground_thickness: 0.02 * MM,
            envelope_width: None,
        }
    }

    pub fn conductor_count(&self) -> usize {
        self.widths.len()
    }

    /// Margin actually used by the builder.
    pub fn effective_margin(&self) -> f64 {
        match self.envelope_width {
            Some(l) => 0.5 * (l - self.widths.iter().sum::<f64>() - self.gaps.iter().sum::<f64>()),
            None => self.margin,
        }
    }

    /// Total width `l`.
    pub fn total_width(&self) -> f64 {
        match self.envelope_width {
            Some(l) => l,
            None => {
                2.0 * self.margin + self.widths.iter().sum::<f64>() + self.gaps.iter().sum::<f64>()
            }
        }
    }

    /// Total dielectric height `H`.
    pub fn total_height(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// Freeze the current total width so later width or gap changes are
    /// absorbed by the margin.
    pub fn hold_envelope(&mut self) {
        self.envelope_width = Some(self.total_width());
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let m = self.conductor_count();
        if m == 0 {
            return Err(GeometryError::NoConductors);
        }
        if self.gaps.len() != m - 1 {
            return Err(GeometryError::GapCount {
                expected: m - 1,
                conductors: m,
                got: self.gaps.len(),
            });
        }
        positive("t", self.thickness)?;
        positive("ground thickness", self.ground_thickness)?;
        for (i, w) in self.widths.iter().enumerate() {
            positive(&format!("w{}", i + 1), *w)?;
        }
        for (i, s) in self.gaps.iter().enumerate() {
            if !s.is_finite() || *s <= 0.0 {
                return Err(GeometryError::Overlap {
                    index: i + 1,
                    gap: *s,
                });
            }
        }
        if self.layers.is_empty() || self.base_layer >= self.layers.len() {
            return Err(GeometryError::BaseLayer {
                index: self.base_layer,
                layers: self.layers.len(),
            });
        }
        for (i, layer) in self.layers.iter().enumerate() {
            positive(&format!("h{}", i + 1), layer.thickness)?;
            if !layer.eps.is_finite() || layer.eps < 1.0 {
                return Err(GeometryError::BadPermittivity {
                    name: format!("eps{}", i + 1),
                    value: layer.eps,
                });
            }
        }
        if let Some(l) = self.envelope_width {
            positive("l", l)?;
        } else {
            positive("d", self.margin)?;
        }
        let d = self.effective_margin();
        if d.is_nan() || d <= 0.0 {
            return Err(GeometryError::NegativeMargin { margin: d });
        }
        if let Some(above) = self.layers.get(self.base_layer + 1) {
            let y_base = self.layer_top(self.base_layer);
            if self.thickness >= above.thickness {
                return Err(GeometryError::ConductorTooThick {
                    top: y_base + self.thickness,
                    interface: y_base + above.thickness,
                });
            }
        }
        // Every layer meets air on its sides and its neighbours above and below.
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.eps == 1.0 {
                return Err(GeometryError::DegenerateInterface {
                    eps: 1.0,
                    location: format!("sides of layer {}", i + 1),
                });
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.eps == layer.eps {
                    return Err(GeometryError::DegenerateInterface {
                        eps: layer.eps,
                        location: format!("interface between layers {} and {}", i + 1, i + 2),
                    });
                }
            }
        }
        Ok(())
    }

    fn layer_top(&self, index: usize) -> f64 {
        self.layers[..=index].iter().map(|l| l.thickness).sum()
    }
}

fn positive(name: &str, value: f64) -> Result<(), GeometryError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::NonPositive {
            name: name.to_string(),
            value,
        })
    }
}

/// The boundary of a built structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub edges: Vec<BoundaryEdge>,
    /// Number of signal conductors `N_C` (the ground is not counted).
    pub conductor_count: usize,
    pub spec: StructureSpec,
}

impl Geometry {
    /// Left x coordinate of every signal conductor.
    pub fn conductor_left_edges(&self) -> Vec<f64> {
        conductor_lefts(&self.spec)
    }
}

fn conductor_lefts(spec: &StructureSpec) -> Vec<f64> {
    let mut x = spec.effective_margin();
    let mut out = Vec::with_capacity(spec.widths.len());
    for (i, w) in spec.widths.iter().enumerate() {
        out.push(x);
        x += w;
        if let Some(s) = spec.gaps.get(i) {
            x += s;
        }
    }
    out
}

/// Build the first fixture family (three-layer stack).
pub fn build_mplp1(spec: &StructureSpec) -> Result<Geometry, GeometryError> {
    if spec.family != Family::Mplp1 || spec.layers.len() != 3 || spec.base_layer != 0 {
        return Err(GeometryError::WrongFamily {
            family: spec.family,
            reason: "expects family mplp1 with three layers and conductors on layer 1".into(),
        });
    }
    build(spec)
}

/// Build the second fixture family (single substrate, conductors in air).
pub fn build_mplp2(spec: &StructureSpec) -> Result<Geometry, GeometryError> {
    if spec.family != Family::Mplp2 || spec.layers.len() != 1 {
        return Err(GeometryError::WrongFamily {
            family: spec.family,
            reason: "expects family mplp2 with a single substrate layer".into(),
        });
    }
    build(spec)
}

/// Build any layered structure.
pub fn build(spec: &StructureSpec) -> Result<Geometry, GeometryError> {
    spec.validate()?;
    let m = spec.conductor_count();
    let l = spec.total_width();
    let t = spec.thickness;
    let air = 1.0;
    let layers = &spec.layers;
    let y_base = spec.layer_top(spec.base_layer);
    let eps_below = layers[spec.base_layer].eps;
    let eps_above = layers.get(spec.base_layer + 1).map_or(air, |l| l.eps);
    let lefts = conductor_lefts(spec);

    let mut edges = Vec::new();

    // Signal conductors, each traversed clockwise: bottom, left, top, right.
    for (i, (&x0, &w)) in lefts.iter().zip(&spec.widths).enumerate() {
        let id = i + 1;
        let x1 = x0 + w;
        let (y0, y1) = (y_base, y_base + t);
        let bl = Point::new(x0, y0);
        let br = Point::new(x1, y0);
        let tl = Point::new(x0, y1);
        let tr = Point::new(x1, y1);
        edges.push(BoundaryEdge::conductor(br, bl, id, eps_below));
        edges.push(BoundaryEdge::conductor(bl, tl, id, eps_above));
        edges.push(BoundaryEdge::conductor(tl, tr, id, eps_above));
        edges.push(BoundaryEdge::conductor(tr, br, id, eps_above));
    }

    // Reference strip under the whole stack.
    {
        let tg = spec.ground_thickness;
        let bl = Point::new(0.0, -tg);
        let br = Point::new(l, -tg);
        let tl = Point::new(0.0, 0.0);
        let tr = Point::new(l, 0.0);
        edges.push(BoundaryEdge::conductor(br, bl, 0, air));
        edges.push(BoundaryEdge::conductor(bl, tl, 0, air));
        edges.push(BoundaryEdge::conductor(tl, tr, 0, layers[0].eps));
        edges.push(BoundaryEdge::conductor(tr, br, 0, air));
    }

    // Horizontal dielectric faces: every interface plus the top of the stack,
    // left to right, normal pointing up.
    let mut y = 0.0;
    for (k, layer) in layers.iter().enumerate() {
        y += layer.thickness;
        let eps_up = layers.get(k + 1).map_or(air, |l| l.eps);
        if k == spec.base_layer {
            let mut x = 0.0;
            for (&x0, &w) in lefts.iter().zip(&spec.widths) {
                edges.push(BoundaryEdge::dielectric(
                    Point::new(x, y),
                    Point::new(x0, y),
                    eps_up,
                    layer.eps,
                ));
                x = x0 + w;
            }
            edges.push(BoundaryEdge::dielectric(
                Point::new(x, y),
                Point::new(l, y),
                eps_up,
                layer.eps,
            ));
        } else {
            edges.push(BoundaryEdge::dielectric(
                Point::new(0.0, y),
                Point::new(l, y),
                eps_up,
                layer.eps,
            ));
        }
    }

    // Side faces against air, one edge per layer on each side.
    let mut y = 0.0;
    for layer in layers {
        let y1 = y + layer.thickness;
        edges.push(BoundaryEdge::dielectric(
            Point::new(0.0, y),
            Point::new(0.0, y1),
            air,
            layer.eps,
        ));
        y = y1;
    }
    let mut y = 0.0;
    for layer in layers {
        let y1 = y + layer.thickness;
        edges.push(BoundaryEdge::dielectric(
            Point::new(l, y1),
            Point::new(l, y),
            air,
            layer.eps,
        ));
        y = y1;
    }

    Ok(Geometry {
        edges,
        conductor_count: m,
        spec: spec.clone(),
    })
}

/// Number of segments per edge, in edge order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationPlan(pub Vec<usize>);

impl SegmentationPlan {
    /// Target segment length `t / n`: each edge gets
    /// `ceil(length / (t / n))` segments, at least one.
    pub fn uniform(geometry: &Geometry, t: f64, n: usize) -> Self {
        let target = t / n as f64;
        Self(
            geometry
                .edges
                .iter()
                .map(|e| tolerant_ceil(e.length() / target).max(1))
                .collect(),
        )
    }

    /// Fixed counts by orientation: `vertical` segments on edges
    /// perpendicular to the x axis, `horizontal` on those perpendicular to y.
    pub fn by_axis(geometry: &Geometry, vertical: usize, horizontal: usize) -> Self {
        Self(
            geometry
                .edges
                .iter()
                .map(|e| {
                    if e.is_horizontal() {
                        horizontal
                    } else {
                        vertical
                    }
                })
                .collect(),
        )
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// Ceiling that ignores round-off just above an integer.
fn tolerant_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// A straight boundary element carrying a constant charge density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
    pub midpoint: Point,
    pub length: f64,
    /// Unit vector from start to end.
    pub tangent: Point,
    pub kind: BoundaryKind,
    pub eps_pos: f64,
    pub eps_neg: f64,
    pub edge: usize,
    /// Index in the previous mesh of the segment this one was split from.
    pub parent: Option<usize>,
}

impl Segment {
    pub fn new(start: Point, end: Point, edge_id: usize, edge: &BoundaryEdge) -> Self {
        let d = end - start;
        let length = d.norm();
        Self {
            start,
            end,
            midpoint: start.midpoint(end),
            length,
            tangent: d * (1.0 / length),
            kind: edge.kind,
            eps_pos: edge.eps_pos,
            eps_neg: edge.eps_neg,
            edge: edge_id,
            parent: None,
        }
    }

    /// Unit normal, counter-clockwise from the tangent.
    pub fn normal(&self) -> Point {
        self.tangent.rot90()
    }

    fn split(&self, own_index: usize) -> [Segment; 2] {
        let mid = self.midpoint;
        let mut a = *self;
        let mut b = *self;
        for (s, start, end) in [(&mut a, self.start, mid), (&mut b, mid, self.end)] {
            let d = end - start;
            s.start = start;
            s.end = end;
            s.midpoint = start.midpoint(end);
            s.length = d.norm();
            s.parent = Some(own_index);
        }
        [a, b]
    }
}

/// A discretized boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub segments: Vec<Segment>,
    pub conductor_count: usize,
    pub geometry: Geometry,
    pub plan: SegmentationPlan,
}

impl Mesh {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Segment indices belonging to conductor `id` (0 = ground).
    pub fn conductor_segments(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.segments
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.kind.conductor() == Some(id))
            .map(|(i, _)| i)
    }
}

/// Split every edge into `plan[e]` equal collinear segments.
pub fn discretize(geometry: &Geometry, plan: &SegmentationPlan) -> Mesh {
    assert_eq!(
        geometry.edges.len(),
        plan.0.len(),
        "segmentation plan does not match the edge count"
    );
    let mut segments = Vec::with_capacity(plan.total());
    for (edge_id, (edge, &count)) in geometry.edges.iter().zip(&plan.0).enumerate() {
        assert!(count >= 1, "edge {edge_id} has a zero segment count");
        let delta = edge.end - edge.start;
        let at = |k: usize| {
            if k == count {
                edge.end
            } else {
                edge.start + delta * (k as f64 / count as f64)
            }
        };
        for k in 0..count {
            segments.push(Segment::new(at(k), at(k + 1), edge_id, edge));
        }
    }
    Mesh {
        segments,
        conductor_count: geometry.conductor_count,
        geometry: geometry.clone(),
        plan: plan.clone(),
    }
}

/// Bisect the listed segments in place, keeping the order of everything else.
pub fn refine(mesh: &Mesh, ids: &BTreeSet<usize>) -> Mesh {
    if let Some(&last) = ids.iter().next_back() {
        assert!(last < mesh.len(), "segment index {last} out of range");
    }
    let mut segments = Vec::with_capacity(mesh.len() + ids.len());
    for (i, seg) in mesh.segments.iter().enumerate() {
        if ids.contains(&i) {
            segments.extend(seg.split(i));
        } else {
            let mut s = *seg;
            s.parent = None;
            segments.push(s);
        }
    }
    Mesh {
        segments,
        conductor_count: mesh.conductor_count,
        geometry: mesh.geometry.clone(),
        plan: mesh.plan.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn closure_residual(g: &Geometry, id: usize) -> Point {
        g.edges
            .iter()
            .filter(|e| e.kind.conductor() == Some(id))
            .fold(Point::default(), |acc, e| acc + (e.end - e.start))
    }

    #[test]
    fn mplp1_total_width() {
        let spec = StructureSpec::mplp1(8, 0.005 * MM);
        assert_relative_eq!(spec.total_width(), 1.05 * MM, max_relative = 1e-12);
        let single = StructureSpec::mplp1(1, 0.005 * MM);
        assert_relative_eq!(
            single.total_width(),
            (2.0 * 0.15 + 0.05) * MM,
            max_relative = 1e-12
        );
    }

    #[test]
    fn envelope_margin_for_ten_lines() {
        let mut spec = StructureSpec::mplp1(10, 0.005 * MM);
        spec.envelope_width = Some(1.05 * MM);
        assert_relative_eq!(spec.effective_margin(), 0.05 * MM, max_relative = 1e-12);
        let g = build_mplp1(&spec).unwrap();
        assert_relative_eq!(g.conductor_left_edges()[0], 0.05 * MM, max_relative = 1e-12);
    }

    #[test]
    fn mplp2_layout() {
        let spec = StructureSpec::mplp2();
        assert_relative_eq!(spec.total_width(), 11.16 * MM, max_relative = 1e-12);
        let g = build_mplp2(&spec).unwrap();
        assert_eq!(g.conductor_count, 10);
        assert_eq!(g.conductor_left_edges()[0], 2.48 * MM);
    }

    #[test]
    fn uniform_mplp2_is_uniform_layout() {
        let mut spec = StructureSpec::mplp2();
        spec.widths = vec![0.3 * MM; 10];
        spec.gaps = vec![0.25 * MM; 9];
        let lefts = build_mplp2(&spec).unwrap().conductor_left_edges();
        for pair in lefts.windows(2) {
            assert_relative_eq!(pair[1] - pair[0], 0.55 * MM, max_relative = 1e-9);
        }
    }

    #[test]
    fn contours_are_closed_and_normals_point_out() {
        for spec in [StructureSpec::mplp1(8, 0.018 * MM), StructureSpec::mplp2()] {
            let g = build(&spec).unwrap();
            for id in 0..=g.conductor_count {
                let r = closure_residual(&g, id);
                assert!(r.norm() < 1e-15, "conductor {id} not closed: {r:?}");
                // Normals point away from the conductor's centroid.
                let edges: Vec<_> = g
                    .edges
                    .iter()
                    .filter(|e| e.kind.conductor() == Some(id))
                    .collect();
                assert_eq!(edges.len(), 4);
                let c = edges.iter().fold(Point::default(), |a, e| a + e.start) * 0.25;
                for e in edges {
                    let m = e.start.midpoint(e.end);
                    assert!((m - c).dot(e.normal()) > 0.0);
                }
            }
        }
    }

    #[test]
    fn interface_excludes_conductor_footprints() {
        let spec = StructureSpec::mplp1(3, 0.005 * MM);
        let g = build(&spec).unwrap();
        let y = 0.05 * MM;
        let on_interface: Vec<_> = g
            .edges
            .iter()
            .filter(|e| !e.kind.is_conductor() && e.start.y == y && e.end.y == y)
            .collect();
        assert_eq!(on_interface.len(), 4);
        let covered: f64 = on_interface.iter().map(|e| e.length()).sum();
        assert_relative_eq!(
            covered,
            spec.total_width() - 3.0 * 0.05 * MM,
            max_relative = 1e-12
        );
        // Upper layer is on the positive side.
        assert!(on_interface
            .iter()
            .all(|e| e.eps_pos == 2.0 && e.eps_neg == 3.8));
    }

    #[test]
    fn builder_errors() {
        let mut spec = StructureSpec::mplp1(10, 0.005 * MM);
        spec.envelope_width = Some(0.9 * MM);
        assert!(matches!(
            build(&spec),
            Err(GeometryError::NegativeMargin { .. })
        ));

        let mut spec = StructureSpec::mplp1(3, 0.005 * MM);
        spec.gaps[1] = 0.0;
        assert!(matches!(
            build(&spec),
            Err(GeometryError::Overlap { index: 2, .. })
        ));

        let mut spec = StructureSpec::mplp1(3, 0.005 * MM);
        spec.layers[1].eps = 3.8;
        assert!(matches!(
            build(&spec),
            Err(GeometryError::DegenerateInterface { .. })
        ));

        let spec = StructureSpec::mplp1(3, 0.2 * MM);
        assert!(matches!(
            build(&spec),
            Err(GeometryError::ConductorTooThick { .. })
        ));

        assert!(matches!(
            build_mplp2(&StructureSpec::mplp1(3, 0.005 * MM)),
            Err(GeometryError::WrongFamily { .. })
        ));
    }

    #[test]
    fn equal_split() {
        let spec = StructureSpec::mplp1(1, 0.05 * MM);
        let g = build(&spec).unwrap();
        // Left margin piece of the conductor interface is 0.15 mm long.
        let idx = g
            .edges
            .iter()
            .position(|e| !e.kind.is_conductor() && e.start == Point::new(0.0, 0.05 * MM))
            .unwrap();
        let mut counts = vec![1; g.edges.len()];
        counts[idx] = 3;
        let mesh = discretize(&g, &SegmentationPlan(counts));
        let pieces: Vec<_> = mesh.segments.iter().filter(|s| s.edge == idx).collect();
        assert_eq!(pieces.len(), 3);
        for p in &pieces {
            assert_relative_eq!(p.length, 0.05 * MM, max_relative = 1e-12);
        }
        assert_eq!(pieces[0].end, pieces[1].start);
        assert_eq!(pieces[2].end, g.edges[idx].end);
    }

    #[test]
    fn uniform_plan_counts() {
        let spec = StructureSpec::mplp1(1, 0.05 * MM);
        let g = build(&spec).unwrap();
        // Conductor top is 0.05 mm long.
        let top = 2;
        assert_eq!(SegmentationPlan::uniform(&g, 0.05 * MM, 3).0[top], 3);
        assert_eq!(SegmentationPlan::uniform(&g, 0.018 * MM, 3).0[top], 9);
        // Conductor sides are 0.05 mm long; n = 1 with t = 0.105 mm floors at 1.
        assert_eq!(SegmentationPlan::uniform(&g, 0.105 * MM, 1).0[1], 1);
        // t / 3 target never exceeded.
        let plan = SegmentationPlan::uniform(&g, 0.05 * MM, 3);
        let mesh = discretize(&g, &plan);
        assert!(mesh
            .segments
            .iter()
            .all(|s| s.length <= 0.05 * MM / 3.0 * (1.0 + 1e-9)));
    }

    #[test]
    fn axis_plan() {
        let g = build(&StructureSpec::mplp1(2, 0.005 * MM)).unwrap();
        let plan = SegmentationPlan::by_axis(&g, 3, 40);
        for (e, n) in g.edges.iter().zip(&plan.0) {
            assert_eq!(*n, if e.start.y == e.end.y { 40 } else { 3 });
        }
    }

    #[test]
    fn refine_bisects_in_place() {
        let g = build(&StructureSpec::mplp1(2, 0.005 * MM)).unwrap();
        let mesh = discretize(&g, &SegmentationPlan::by_axis(&g, 3, 40));
        assert_eq!(refine(&mesh, &BTreeSet::new()).segments, {
            let mut s = mesh.segments.clone();
            s.iter_mut().for_each(|x| x.parent = None);
            s
        });

        let ids: BTreeSet<usize> = [0, 5, 17].into_iter().collect();
        let fine = refine(&mesh, &ids);
        assert_eq!(fine.len(), mesh.len() + 3);
        let first = &mesh.segments[0];
        assert_eq!(fine.segments[0].end, first.midpoint);
        assert_eq!(fine.segments[1].start, first.midpoint);
        assert_relative_eq!(
            fine.segments[0].length,
            0.5 * first.length,
            max_relative = 1e-12
        );
        assert_eq!(fine.segments[1].parent, Some(0));
        // Untouched segments keep their relative order.
        assert_eq!(fine.segments[2].start, mesh.segments[1].start);
        assert_relative_eq!(
            fine.total_length(),
            mesh.total_length(),
            max_relative = 1e-13
        );
    }
}
