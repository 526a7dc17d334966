//! Helpers shared by the integration tests.

#![allow(dead_code)]

use capmom::geometry::{BoundaryEdge, BoundaryKind, Point, Segment};

/// 15-point Kronrod nodes on [-1, 1] (non-negative half) and weights, with
/// the embedded 7-point Gauss weights for the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss-Kronrod panel: (Kronrod estimate, |K - G|, ∫|f|).
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    let mut abs = WGK[7] * fc.abs();
    for i in 0..7 {
        let f1 = f(c - h * XGK[i]);
        let f2 = f(c + h * XGK[i]);
        k += WGK[i] * (f1 + f2);
        abs += WGK[i] * (f1.abs() + f2.abs());
        if i % 2 == 1 {
            g += WG[i / 2] * (f1 + f2);
        }
    }
    (k * h, ((k - g) * h).abs(), abs * h.abs())
}

/// Adaptive Gauss-Kronrod quadrature. Returns the integral and the integral
/// of `|f|`, both accurate to about `rel` of the latter.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> (f64, f64) {
    // A panel is accepted once its error estimate fits its share of the
    // global budget, or is down at the rounding level of its own sum.
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, density: f64, depth: u32) -> (f64, f64) {
        let (k, err, abs) = gk15(f, a, b);
        if err <= density * (b - a) || err <= 50.0 * f64::EPSILON * abs || depth == 0 {
            return (k, abs);
        }
        let m = 0.5 * (a + b);
        let (l, la) = recurse(f, a, m, density, depth - 1);
        let (r, ra) = recurse(f, m, b, density, depth - 1);
        (l + r, la + ra)
    }
    let (_, _, scale) = gk15(f, a, b);
    recurse(f, a, b, rel * scale.max(f64::MIN_POSITIVE) / (b - a), 50)
}

/// Integrate `g(x, v)` along `seg`, where `x` is the offset along the
/// segment from the foot of the perpendicular through `obs` and `v` the
/// signed distance of `obs` from the segment line. Working in these
/// coordinates keeps the integrand smooth down to tiny distances, and the
/// split at the foot puts near-singular peaks on a panel boundary.
pub fn along_segment(seg: &Segment, obs: Point, g: &dyn Fn(f64, f64) -> f64) -> (f64, f64) {
    let rel = obs - seg.start;
    let s0 = rel.dot(seg.tangent);
    let mut v = rel.dot(seg.tangent.rot90());
    // Points built on the segment carry a rounding-level offset; treat them
    // as lying on it so the logarithmic endpoint singularity is exact.
    if v.abs() <= 1e-12 * seg.length {
        v = 0.0;
    }
    let f = |x: f64| g(x, v);
    let (lo, hi) = (-s0, seg.length - s0);
    let split = 0.0f64.clamp(lo, hi);
    let mut value = 0.0;
    let mut scale = 0.0;
    for (a, b) in [(lo, split), (split, hi)] {
        if b > a {
            let (part, abs) = integrate(&f, a, b, 1e-14);
            value += part;
            scale += abs;
        }
    }
    (value, scale)
}

/// Reference `∫ ln|obs − r'| dl'`.
pub fn log_potential(obs: Point, seg: &Segment) -> (f64, f64) {
    along_segment(seg, obs, &|x, v| x.hypot(v).ln())
}

/// Reference `∫ (obs − r')·n / |obs − r'|² dl'`.
pub fn normal_field(obs: Point, n: Point, seg: &Segment) -> (f64, f64) {
    let n_along = n.dot(seg.tangent);
    let n_across = n.dot(seg.tangent.rot90());
    // obs − r' = −x·tangent + v·normal
    along_segment(seg, obs, &|x, v| {
        (-x * n_along + v * n_across) / (x * x + v * v)
    })
}

pub fn segment(a: Point, b: Point) -> Segment {
    let edge = BoundaryEdge {
        start: a,
        end: b,
        kind: BoundaryKind::DielectricDielectric,
        eps_pos: 1.0,
        eps_neg: 2.0,
    };
    Segment::new(a, b, 0, &edge)
}
