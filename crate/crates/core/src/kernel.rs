//! Closed-form line integrals of the 2D free-space kernels over a straight
//! segment carrying unit charge density.
//!
//! Both integrals are evaluated in segment-local coordinates: `x` runs
//! along the segment relative to the projection of the observation point,
//! spanning `[a, b]` with `b - a = L`, and `v` is the signed perpendicular
//! distance of the observation point from the segment line.

use crate::geometry::{Point, Segment};

/// Observation points closer than this fraction of the segment length to
/// the segment line are treated as lying on it.
const ON_LINE: f64 = 1e-12;

struct Local {
    a: f64,
    b: f64,
    v: f64,
}

fn local(obs: Point, seg: &Segment) -> Local {
    let rel = obs - seg.start;
    let along = rel.dot(seg.tangent);
    let mut v = rel.dot(seg.tangent.rot90());
    if v.abs() <= ON_LINE * seg.length {
        v = 0.0;
    }
    Local {
        a: -along,
        b: seg.length - along,
        v,
    }
}

/// Angle subtended by the segment at the observation point, in `[0, pi]`.
/// Zero when the point is on the segment line.
fn subtended(l: &Local, length: f64) -> f64 {
    if l.v == 0.0 {
        0.0
    } else {
        let av = l.v.abs();
        (av * length).atan2(l.v * l.v + l.a * l.b)
    }
}

fn x_ln_r(x: f64, v: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.hypot(v).ln()
    }
}

/// `∫_seg ln|obs − r'| dl'`.
///
/// Finite when `obs` lies on the segment (the logarithmic singularity is
/// integrable).
pub fn log_potential_integral(obs: Point, seg: &Segment) -> f64 {
    let l = local(obs, seg);
    x_ln_r(l.b, l.v) - x_ln_r(l.a, l.v) - seg.length + l.v.abs() * subtended(&l, seg.length)
}

/// `∫_seg (obs − r')·n / |obs − r'|² dl'` for a unit vector `n`.
///
/// Returns the principal value when `obs` lies on the segment itself; the
/// half-charge jump of the normal field is left to the caller.
pub fn normal_field_integral(obs: Point, n: Point, seg: &Segment) -> f64 {
    let l = local(obs, seg);
    let n_along = n.dot(seg.tangent);
    let n_perp = n.dot(seg.tangent.rot90());
    let mut value = 0.0;
    if n_along != 0.0 {
        let ra = l.a.hypot(l.v);
        let rb = l.b.hypot(l.v);
        value -= n_along * (rb.ln() - ra.ln());
    }
    if l.v != 0.0 {
        value += n_perp * l.v.signum() * subtended(&l, seg.length);
    }
    value
}
