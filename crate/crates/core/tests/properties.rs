//! Property suites over random inputs.

use std::f64::consts::PI;

use bergman_lab::fields::{
    apply_partial, apply_tuple, apply_vector_field, build_bump_cutoff, build_counterexample_fk,
    build_harmonic_monomial, harmonicity_residual, linear_combination, monomial, MultiIndex, Part,
    ScalarField, TangentTuple,
};
use bergman_lab::flow::{
    apply_a, ftc_residual, iterated_antiderivative_residual, prop_decompose_with, AOperator,
    CollarSpec, FlowMap, Integrator, DEFAULT_RK4_STEP,
};
use bergman_lab::geometry::{ball_volume, spanning_set_for_ball, BallDomain, Point, VectorFieldSpec};
use bergman_lab::jet::Jet;
use bergman_lab::kernels::{harmonic_kernel, project_kernel};
use bergman_lab::quadrature::{disk_rule, l2_norm, sobolev_norm, tangential_sobolev_norm};
use proptest::prelude::*;

fn interior2(max_r: f64) -> impl Strategy<Value = Point> {
    (0.0..max_r, 0.0..2.0 * PI).prop_map(|(r, t)| Point::polar(r, t))
}

fn interior3(max_r: f64) -> impl Strategy<Value = Point> {
    (0.0..max_r, 0.0..PI, 0.0..2.0 * PI).prop_map(|(r, p, t)| {
        Point::xyz(r * p.sin() * t.cos(), r * p.sin() * t.sin(), r * p.cos())
    })
}

/// `Σ c_α x^α` over `|α| ≤ 3` in two variables.
fn poly2() -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(-1.0..1.0f64, 10).prop_map(|cs| {
        let terms: Vec<(f64, ScalarField)> = MultiIndex::all_up_to(2, 3)
            .into_iter()
            .zip(cs)
            .map(|(a, c)| (c, monomial(&[a.entries()[0] as u32, a.entries()[1] as u32])))
            .collect();
        linear_combination(&terms).unwrap()
    })
}

fn rotation(dim: usize, i: usize, j: usize) -> VectorFieldSpec {
    VectorFieldSpec::rotation(dim, i, j).unwrap()
}

/// `ζ · Re((e^{iα} z)^m)`, the rotated copy of `ζ · Re z^m`.
fn rotated_mode(m: u32, alpha: f64) -> ScalarField {
    let ma = m as f64 * alpha;
    let h = linear_combination(&[
        (ma.cos(), build_harmonic_monomial(m, Part::Real)),
        (-ma.sin(), build_harmonic_monomial(m, Part::Imag)),
    ])
    .unwrap();
    build_bump_cutoff(0.5, 0.7).unwrap().times(&h).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jets_match_closed_form_derivatives(x in -1.5..1.5f64, y in -1.5..1.5f64) {
        // f = sin(x)·exp(2y), ∂x∂y² f = cos(x)·4exp(2y)
        let v = Jet::seed(&[x, y], 4);
        let f = v[0].sin() * (&v[1] * 2.0).exp();
        let d = f.derivative(&[1, 2]).unwrap();
        prop_assert!((d - 4.0 * x.cos() * (2.0 * y).exp()).abs() < 1e-12 * (1.0 + d.abs()));
    }

    #[test]
    fn rotations_annihilate_defining_function(p in interior3(0.99)) {
        let r = monomial(&[2, 0, 0]).plus(&monomial(&[0, 2, 0])).unwrap().plus(&monomial(&[0, 0, 2])).unwrap();
        for (i, j) in [(1, 2), (1, 3), (2, 3)] {
            let tr = apply_vector_field(&r, &rotation(3, i, j)).unwrap();
            prop_assert!(tr.eval(&p).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn spanning_set_has_full_rank_on_the_sphere(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for n in [2usize, 3] {
            let set = spanning_set_for_ball(n).unwrap();
            let x = BallDomain::new(n).unwrap().sample_boundary(&mut rng);
            prop_assert_eq!(set.rank_with_radial(&x), n);
        }
    }

    #[test]
    fn vector_fields_are_linear(f in poly2(), g in poly2(), a in -2.0..2.0f64, p in interior2(0.95)) {
        let t = rotation(2, 1, 2);
        let combo = linear_combination(&[(a, f.clone()), (1.0, g.clone())]).unwrap();
        let lhs = apply_vector_field(&combo, &t).unwrap().eval(&p).unwrap();
        let rhs = a * apply_vector_field(&f, &t).unwrap().eval(&p).unwrap()
            + apply_vector_field(&g, &t).unwrap().eval(&p).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
        let alpha = MultiIndex::new(vec![1, 1]).unwrap();
        let lhs = apply_partial(&combo, &alpha).unwrap().eval(&p).unwrap();
        let rhs = a * apply_partial(&f, &alpha).unwrap().eval(&p).unwrap()
            + apply_partial(&g, &alpha).unwrap().eval(&p).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn tuples_compose_outermost_first(c in -2.0..2.0f64, p in interior3(0.95)) {
        let set = spanning_set_for_ball(3).unwrap();
        let g = monomial(&[1, 2, 0]).scaled(c).plus(&monomial(&[0, 1, 2])).unwrap();
        let tuple = TangentTuple::new(vec![1, 3]);
        let direct = apply_tuple(&g, &tuple, &set).unwrap().eval(&p).unwrap();
        let nested = apply_vector_field(&apply_vector_field(&g, set.get(3).unwrap()).unwrap(), set.get(1).unwrap())
            .unwrap()
            .eval(&p)
            .unwrap();
        prop_assert!((direct - nested).abs() < 1e-13);
    }

    #[test]
    fn rotation_keeps_harmonic_polynomials_harmonic(m in 1u32..12, imag in any::<bool>()) {
        let part = if imag { Part::Imag } else { Part::Real };
        let h = build_harmonic_monomial(m, part);
        let th = apply_vector_field(&h, &rotation(2, 1, 2)).unwrap();
        let sample: Vec<Point> = (0..12).map(|i| Point::polar(0.1 + 0.07 * i as f64, 0.5 * i as f64)).collect();
        prop_assert!(harmonicity_residual(&th, &sample).unwrap() < 1e-8);
    }

    #[test]
    fn kernel_is_symmetric(x in interior2(0.95), y in interior2(0.95), a in interior3(0.95), b in interior3(0.95)) {
        let d2 = harmonic_kernel(&x, &y, 2).unwrap() - harmonic_kernel(&y, &x, 2).unwrap();
        let d3 = harmonic_kernel(&a, &b, 3).unwrap() - harmonic_kernel(&b, &a, 3).unwrap();
        prop_assert!(d2.abs() < 1e-13 && d3.abs() < 1e-13);
    }

    #[test]
    fn flow_group_property(p in interior2(1.0), s in -0.5..0.0f64, t in -0.5..0.0f64) {
        let rk4 = FlowMap::new(VectorFieldSpec::radial(2), CollarSpec::default(), Integrator::Rk4 { step: DEFAULT_RK4_STEP }).unwrap();
        for flow in [FlowMap::radial(2), rk4] {
            let two = flow.eval(s, &flow.eval(t, &p).unwrap()).unwrap();
            let one = flow.eval(s + t, &p).unwrap();
            let d: f64 = two.coords().iter().zip(one.coords()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(d < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mean_value_at_the_center(f in poly2()) {
        let q = disk_rule(24, 32).unwrap();
        let at_center = project_kernel(&f, &Point::xy(0.0, 0.0), &q).unwrap();
        let average = q.integrate_fn(|x| f.eval_at(x)).unwrap() / ball_volume(2).unwrap();
        prop_assert!((at_center - average).abs() < 1e-12);
    }

    #[test]
    fn norms_are_ordered(f in poly2()) {
        let q = disk_rule(16, 24).unwrap();
        let set = spanning_set_for_ball(2).unwrap();
        let l2 = l2_norm(&f, &q).unwrap();
        let t1 = tangential_sobolev_norm(&f, 1, &set, &q).unwrap().value;
        let s1 = sobolev_norm(&f, 1, &q).unwrap().value;
        let s2 = sobolev_norm(&f, 2, &q).unwrap().value;
        // |T f| ≤ |x||∇f| ≤ |∇f| on the disk
        prop_assert!(l2 <= t1 * (1.0 + 1e-14));
        prop_assert!(t1 <= s1 * (1.0 + 1e-14) + 1e-14);
        prop_assert!(s1 <= s2 * (1.0 + 1e-14));
    }

    #[test]
    fn collar_residuals_are_rotation_invariant(m in 0u32..5, alpha in 0.0..2.0 * PI) {
        let q = disk_rule(16, 24).unwrap();
        let g = rotated_mode(m, 0.0);
        let gr = rotated_mode(m, alpha);
        let a = ftc_residual(&g, &q).unwrap();
        let b = ftc_residual(&gr, &q).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{} {}", a, b);
        let a = iterated_antiderivative_residual(&g, 1, &q).unwrap();
        let b = iterated_antiderivative_residual(&gr, 1, &q).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{} {}", a, b);
    }

    #[test]
    fn antiderivative_commutes_with_rotation(m in 0u32..6, p in interior2(0.99)) {
        let g = build_bump_cutoff(0.5, 0.7).unwrap().times(&build_harmonic_monomial(m, Part::Imag)).unwrap();
        let t = rotation(2, 1, 2);
        let a = AOperator::power(2, 1);
        let lhs = apply_a(&a, &apply_vector_field(&g, &t).unwrap()).unwrap().eval(&p).unwrap();
        let rhs = apply_vector_field(&apply_a(&a, &g).unwrap(), &t).unwrap().eval(&p).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }
}

#[test]
fn ball_volume_recurrence() {
    let v2 = ball_volume(2).unwrap();
    let v4 = ball_volume(4).unwrap();
    assert!((v4 - v2 * 2.0 * PI / 4.0).abs() < 1e-14);
    let v5 = ball_volume(5).unwrap();
    assert!((v5 - ball_volume(3).unwrap() * 2.0 * PI / 5.0).abs() < 1e-14);
}

#[test]
fn built_in_families_agree_with_finite_differences() {
    let families = [
        build_harmonic_monomial(5, Part::Real),
        build_counterexample_fk(3).unwrap(),
        build_bump_cutoff(0.5, 0.7).unwrap(),
        monomial(&[2, 3]),
    ];
    let alpha = MultiIndex::new(vec![1, 1]).unwrap();
    for f in &families {
        for p in [Point::polar(0.3, 0.4), Point::polar(0.85, 2.0), Point::polar(0.6, -1.0)] {
            let exact = f.derivative(&alpha, p.coords()).unwrap();
            let at = |dx: f64, dy: f64| f.eval_at(&[p.coords()[0] + dx, p.coords()[1] + dy]).unwrap();
            let mixed = |h: f64| (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
            let fd = (4.0 * mixed(5e-4) - mixed(1e-3)) / 3.0;
            assert!((exact - fd).abs() < 1e-5 * (1.0 + exact.abs()), "{} {exact} {fd}", f.label());
        }
    }
}

#[test]
fn norms_converge_under_refinement() {
    let coarse = disk_rule(160, 256).unwrap();
    let fine = disk_rule(320, 512).unwrap();
    for f in [build_harmonic_monomial(7, Part::Imag), build_counterexample_fk(5).unwrap(), monomial(&[3, 2])] {
        let a = sobolev_norm(&f, 1, &coarse).unwrap().value;
        let b = sobolev_norm(&f, 1, &fine).unwrap().value;
        assert!((a - b).abs() < 1e-10, "{}", f.label());
    }
}

#[test]
fn harmonic_norm_ratios_stay_bounded() {
    let q = disk_rule(80, 128).unwrap();
    let set = spanning_set_for_ball(2).unwrap();
    let n = VectorFieldSpec::radial(2);
    let mut tang = Vec::new();
    let mut normal = Vec::new();
    for m in 1..=40 {
        let h = build_harmonic_monomial(m, Part::Real);
        let h1 = sobolev_norm(&h, 1, &q).unwrap().value;
        tang.push(h1 / tangential_sobolev_norm(&h, 1, &set, &q).unwrap().value);
        let nh = apply_vector_field(&h, &n).unwrap();
        normal.push(h1 / (l2_norm(&nh, &q).unwrap() + l2_norm(&h, &q).unwrap()));
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    assert!(max(&tang) <= 2.0 * tang[7]);
    assert!(max(&normal) <= 2.0 * normal[7]);
}

#[test]
fn doubling_s_nodes_shrinks_the_decomposition_residual() {
    let q = disk_rule(16, 24).unwrap();
    let zeta = build_bump_cutoff(0.5, 0.7).unwrap();
    let h = build_harmonic_monomial(5, Part::Real);
    let mut last = f64::INFINITY;
    for nodes in [4, 8, 16, 32, 64] {
        let r = prop_decompose_with(&h, 1, &zeta, &q, nodes).unwrap().residual;
        assert!(r * 4.0 <= last || r < 1e-10, "{nodes}: {r} after {last}");
        last = r;
    }
}

#[test]
fn norm_values_are_deterministic() {
    let q = disk_rule(64, 96).unwrap();
    let f = build_bump_cutoff(0.5, 0.7).unwrap().times(&monomial(&[1, 2])).unwrap();
    let a = sobolev_norm(&f, 2, &q).unwrap().value;
    let b = sobolev_norm(&f, 2, &q).unwrap().value;
    assert_eq!(a.to_bits(), b.to_bits());
}
