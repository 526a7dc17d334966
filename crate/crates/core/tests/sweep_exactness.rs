use capmom::geometry::{StructureSpec, MM};
use capmom::refine::RefinementConfig;
use capmom::sweep::{
    compare, plan_from_range, Method, Parameter, ParameterRange, Sweep, SweepPlan,
};
use capmom::system::{assemble, partial_reassemble, ChangeMask};
use proptest::prelude::*;

fn small_config() -> RefinementConfig {
    let mut config = RefinementConfig::method1(75.0);
    config.initial.horizontal = 12;
    config
}

fn plan(m: usize, parameters: &[Parameter], span: f64) -> SweepPlan {
    let base = StructureSpec::mplp1(m, 0.018 * MM);
    SweepPlan {
        parameters: parameters
            .iter()
            .map(|p| ParameterRange {
                parameter: *p,
                values: plan_from_range(p.nominal(&base).unwrap(), span, 2.0).unwrap(),
            })
            .collect(),
        base,
        hold_envelope: true,
    }
}

#[test]
fn partial_and_full_sweeps_agree_bit_for_bit() {
    let cases: [&[Parameter]; 5] = [
        &[Parameter::Thickness],
        &[Parameter::Width],
        &[Parameter::Gap],
        &[Parameter::LayerEps(1)],
        &[Parameter::Thickness, Parameter::LayerEps(1)],
    ];
    for parameters in cases {
        let sweep = Sweep::prepare(&plan(3, parameters, 8.0), &small_config()).unwrap();
        let one = sweep.run(Method::I).unwrap();
        let two = sweep.run(Method::II).unwrap();
        let verdict = compare(&one, &two).unwrap();
        assert!(verdict.systems_identical, "{parameters:?}");
        assert_eq!(verdict.max_relative_difference, 0.0, "{parameters:?}");
        assert!(one.points.iter().skip(2).all(|p| p.partial));
        for (a, b) in one.points.iter().zip(&two.points) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.capacitance.values), bits(&b.capacitance.values));
        }
    }
}

#[test]
fn permittivity_sweep_changes_fewer_entries_than_thickness() {
    let fraction = |p: Parameter| {
        let sweep = Sweep::prepare(&plan(3, &[p], 6.0), &small_config()).unwrap();
        sweep.run(Method::I).unwrap().unchanged_fraction.unwrap()
    };
    let t = fraction(Parameter::Thickness);
    let eps = fraction(Parameter::LayerEps(1));
    assert!(eps > t, "{eps} <= {t}");
    assert!(eps > 0.99);
}

#[test]
fn method_two_has_no_presolve_and_no_mask() {
    let sweep = Sweep::prepare(&plan(2, &[Parameter::Width], 4.0), &small_config()).unwrap();
    let two = sweep.run(Method::II).unwrap();
    assert_eq!(two.presolve_seconds, 0.0);
    assert!(two.unchanged_fraction.is_none());
    let one = sweep.run(Method::I).unwrap();
    let sum: f64 = one.points.iter().map(|p| p.seconds).sum();
    assert!((one.t_tot - sum - one.presolve_seconds).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    /// Reassembling a superset of the changed entries on top of another
    /// system reproduces the full assembly exactly.
    #[test]
    fn superset_masks_are_exact(t in 0.01f64..0.05, dt in 0.001f64..0.01, extra in prop::collection::vec(any::<bool>(), 64)) {
        use capmom::geometry::{build, discretize, SegmentationPlan};
        let mesh_for = |t: f64| {
            let mut spec = StructureSpec::mplp1(2, t * MM);
            spec.hold_envelope();
            let g = build(&spec).unwrap();
            discretize(&g, &SegmentationPlan::by_axis(&g, 2, 6))
        };
        let a = assemble(&mesh_for(t));
        let mesh = mesh_for(t + dt);
        let b = assemble(&mesh);
        let n = a.n();
        let rows: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| a.get(i, j).to_bits() != b.get(i, j).to_bits() || extra[(i * n + j) % extra.len()]).collect())
            .collect();
        let rebuilt = partial_reassemble(&a, &mesh, &ChangeMask::from_rows(&rows)).unwrap();
        prop_assert!(rebuilt.bit_identical(&b));
    }
}
