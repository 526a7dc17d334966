mod common;

use std::time::Instant;

use capmom::geometry::Point;
use capmom::kernel::{log_potential_integral, normal_field_integral};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Observation point relative to a segment: arbitrary, hugging the segment
/// line, on the segment itself, or on its extension.
fn observation(rng: &mut ChaCha8Rng, start: Point, tangent: Point, length: f64) -> (Point, bool) {
    let normal = tangent.rot90();
    let on_line = |s: f64| start + tangent * s;
    match rng.gen_range(0..4) {
        0 => {
            let s = rng.gen_range(-3.0..4.0) * length;
            let v = rng.gen_range(-3.0..3.0) * length;
            (on_line(s) + normal * v, false)
        }
        1 => {
            let s = rng.gen_range(-0.5..1.5) * length;
            let v =
                length * 10f64.powf(rng.gen_range(-4.0..-1.0)) * if rng.gen() { 1.0 } else { -1.0 };
            (on_line(s) + normal * v, false)
        }
        2 => (on_line(rng.gen_range(0.01..0.99) * length), true),
        _ => {
            let s = if rng.gen() {
                rng.gen_range(1.05..5.0)
            } else {
                rng.gen_range(-4.0..-0.05)
            };
            (on_line(s * length), false)
        }
    }
}

fn agrees(value: f64, reference: f64, scale: f64) -> bool {
    (value - reference).abs() <= 1e-9 * reference.abs().max(scale)
}

#[test]
fn closed_forms_match_adaptive_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let started = Instant::now();
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let length = 10f64.powf(rng.gen_range(-6.0..-3.0));
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let tangent = Point::new(angle.cos(), angle.sin());
        let start = Point::new(rng.gen_range(-1e-3..1e-3), rng.gen_range(-1e-3..1e-3));
        let seg = common::segment(start, start + tangent * length);
        let (obs, on_segment) = observation(&mut rng, seg.start, seg.tangent, seg.length);

        let (reference, scale) = common::log_potential(obs, &seg);
        let value = log_potential_integral(obs, &seg);
        worst = worst.max((value - reference).abs() / reference.abs().max(scale));
        assert!(
            agrees(value, reference, scale),
            "case {case}: log {value} vs {reference}"
        );

        // The field integral is a principal value on the segment itself;
        // compare it only off the segment.
        if !on_segment {
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let n = Point::new(phi.cos(), phi.sin());
            let (reference, scale) = common::normal_field(obs, n, &seg);
            let value = normal_field_integral(obs, n, &seg);
            worst = worst.max((value - reference).abs() / reference.abs().max(scale));
            assert!(
                agrees(value, reference, scale),
                "case {case}: field {value} vs {reference}"
            );
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    println!("worst relative deviation {worst:.2e} in {seconds:.2} s");
    assert!(seconds < 10.0);
}
