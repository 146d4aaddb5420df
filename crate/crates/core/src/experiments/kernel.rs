use std::f64::consts::PI;

use super::{rng_for, test_points, ExperimentConfig, ExperimentKind, Provenance, ReportRow, Rows};
use crate::error::Result;
use crate::fields::{
    build_bump_cutoff, build_harmonic_monomial, harmonicity_residual, monomial, norm_squared, Part,
    ScalarField,
};
use crate::geometry::{spanning_set_for_ball, BallDomain, Point};
use crate::kernels::{
    commutator_residual, harmonic_kernel, kernel_decomposition_residual, project_basis_disk,
    project_via_analytic, KernelEval,
};
use crate::quadrature::{ball3_rule, disk_rule, inner_product, QuadratureRule};

const SOURCE_KERNEL: &str = "P(x,y) = (n(1−|x|²|y|²)²/D − 4|x|²|y|²)/(nV D^{n/2})";
const SOURCE_COMPLEX: &str = "P = 2 Re K − 1/π, K = (1/π)(1 − z w̄)^−2";

pub(super) fn run(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let mut rows = Rows::new("kernel");
    let mut rng = rng_for(config, ExperimentKind::Kernel);
    if config.n == 2 {
        disk_checks(config, &mut rows, &mut rng)?;
    }
    ball_checks(config, &mut rows, &mut rng)?;
    Ok(rows.finish())
}

fn pairs(domain: &BallDomain, rng: &mut impl rand::Rng, count: usize, radius: f64) -> Vec<(Point, Point)> {
    (0..count)
        .map(|_| (domain.sample_interior(rng, radius), domain.sample_interior(rng, radius)))
        .collect()
}

/// `max |P(x,y) − P(y,x)|`.
fn symmetry(pairs: &[(Point, Point)], n: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, y) in pairs {
        worst = worst.max((harmonic_kernel(x, y, n)? - harmonic_kernel(y, x, n)?).abs());
    }
    Ok(worst)
}

/// Fourth-order finite-difference Laplacian of `P(·, y)` at each `x`, worst case.
fn kernel_harmonicity(xs: &[Point], y: &Point, n: usize) -> Result<f64> {
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for x in xs {
        let mut lap = 0.0;
        for d in 0..n {
            let at = |s: f64| {
                let mut c = x.coords().to_vec();
                c[d] += s * h;
                harmonic_kernel(&Point::new(c)?, y, n)
            };
            lap += (-at(2.0)? + 16.0 * at(1.0)? - 30.0 * at(0.0)? + 16.0 * at(-1.0)? - at(-2.0)?)
                / (12.0 * h * h);
        }
        worst = worst.max(lap.abs());
    }
    Ok(worst)
}

fn disk_checks(config: &ExperimentConfig, rows: &mut Rows, rng: &mut impl rand::Rng) -> Result<()> {
    let disk = BallDomain::disk();
    let near = pairs(&disk, rng, config.kernel_pairs, 0.8);
    let mut far = pairs(&disk, rng, config.kernel_pairs, 0.95);
    far.push((Point::xy(0.95, 0.0), Point::xy(0.95, 0.0)));
    let res_near = kernel_decomposition_residual(&near)?;
    let res_far = kernel_decomposition_residual(&far)?;
    rows.residual(None, "decomposition_residual_abs_r0.80", res_near.absolute, config.tol("kernel_abs"), SOURCE_COMPLEX);
    rows.at_most(None, "decomposition_residual_rel_r0.95", res_far.relative, config.tol("kernel_rel"), Provenance::Derived, SOURCE_COMPLEX);
    rows.residual(None, "symmetry_n2", symmetry(&far, 2)?, config.tol("symmetry"), SOURCE_KERNEL);

    let y = disk.sample_interior(rng, 0.5);
    let xs: Vec<Point> = (0..100).map(|_| disk.sample_interior(rng, 0.7)).collect();
    rows.residual(None, "harmonicity_in_x_n2", kernel_harmonicity(&xs, &y, 2)?, config.tol("kernel_harmonicity"), SOURCE_KERNEL);

    let origin = Point::xy(0.0, 0.0);
    let mut center: f64 = 0.0;
    for (_, y) in &far {
        center = center.max((harmonic_kernel(&origin, y, 2)? - 1.0 / PI).abs());
    }
    rows.residual(None, "center_value_n2", center, config.tol("center"), "P(0,y) = 1/π");

    let q = disk_rule(config.quad[0], config.quad[1])?;
    let eval = KernelEval::new(2, config.eval_radius)?;

    // mean value: (P|x|²)(0) = (1/π)∫|y|² = 1/2
    let mean = eval.project_at(&norm_squared(2), std::slice::from_ref(&origin), &q)?[0];
    rows.abs(None, "mean_value_of_norm_squared", mean, 0.5, config.tol("mean_value"), Provenance::Derived, "(Pf)(0) = (1/π)∫f");

    let points = test_points(12, 0.5);
    let mut harmonic = vec![build_harmonic_monomial(0, Part::Real)];
    for m in 1..=8 {
        harmonic.push(build_harmonic_monomial(m, Part::Real));
        harmonic.push(build_harmonic_monomial(m, Part::Imag));
    }
    for h in &harmonic {
        let projected = eval.project_at(h, &points, &q)?;
        let mut worst: f64 = 0.0;
        for (p, v) in points.iter().zip(&projected) {
            worst = worst.max((v - h.eval(p)?).abs());
        }
        rows.residual(None, format!("reproducing[{}]", h.label()), worst, config.tol("reproducing"), "Ph = h for harmonic h");
    }

    let zeta = build_bump_cutoff(0.5, 0.7)?;
    let smooth: Vec<ScalarField> = vec![
        monomial(&[2, 0]),
        monomial(&[1, 1]),
        monomial(&[3, 1]),
        norm_squared(2),
        zeta.clone(),
        zeta.times(&build_harmonic_monomial(2, Part::Real))?,
        monomial(&[0, 4]),
        monomial(&[2, 2]),
        zeta.times(&monomial(&[1, 0]))?,
        monomial(&[5, 0]),
    ];
    let degree = config.basis_degree;
    let t = spanning_set_for_ball(2)?.get(1)?.clone();
    let mut bases = Vec::with_capacity(smooth.len());
    for f in &smooth {
        let basis = project_basis_disk(f, degree, &q)?;
        rows.residual(None, format!("commutator[{}]", f.label()), commutator_residual(f, &t, degree, &q)?, config.tol("commutator"), "[T, P] = 0 on the disk");
        let again = project_basis_disk(&basis.to_field(), degree, &q)?;
        rows.residual(None, format!("idempotence[{}]", f.label()), basis.max_abs_difference(&again), config.tol("idempotence"), "P² = P");
        bases.push(basis);
    }

    // three routes at the test points for a few non-harmonic inputs
    for idx in [0, 2, 5] {
        let f = &smooth[idx];
        let kernel_route = eval.project_at(f, &points, &q)?;
        let analytic = project_via_analytic(f, degree, &q)?;
        let mut worst: f64 = 0.0;
        for (p, kv) in points.iter().zip(&kernel_route) {
            let b = bases[idx].eval(p.coords());
            let a = analytic.eval(p.coords());
            worst = worst.max((kv - b).abs()).max((kv - a).abs()).max((a - b).abs());
        }
        rows.residual(None, format!("route_agreement[{}]", f.label()), worst, config.tol("route"), "kernel, basis and analytic routes");
        let pf = bases[idx].to_field();
        let probe = test_points(24, 0.9);
        rows.residual(None, format!("projection_harmonicity[{}]", f.label()), harmonicity_residual(&pf, &probe)?, config.tol("projection_harmonicity"), "ΔPf = 0");
    }

    for (i, j) in [(0, 1), (2, 3), (4, 6), (5, 7), (8, 9)] {
        let lhs = inner_product(&bases[i].to_field(), &smooth[j], &q)?;
        let rhs = inner_product(&smooth[i], &bases[j].to_field(), &q)?;
        rows.residual(None, format!("self_adjoint[{},{}]", smooth[i].label(), smooth[j].label()), (lhs - rhs).abs(), config.tol("self_adjoint"), "⟨Pf,g⟩ = ⟨f,Pg⟩");
    }
    Ok(())
}

fn ball_checks(config: &ExperimentConfig, rows: &mut Rows, rng: &mut impl rand::Rng) -> Result<()> {
    let ball = BallDomain::new(3)?;
    let sample = pairs(&ball, rng, config.kernel_pairs, 0.95);
    rows.residual(None, "symmetry_n3", symmetry(&sample, 3)?, config.tol("symmetry"), SOURCE_KERNEL);

    let y = ball.sample_interior(rng, 0.5);
    let xs: Vec<Point> = (0..100).map(|_| ball.sample_interior(rng, 0.7)).collect();
    rows.residual(None, "harmonicity_in_x_n3", kernel_harmonicity(&xs, &y, 3)?, config.tol("kernel_harmonicity"), SOURCE_KERNEL);

    let origin = Point::xyz(0.0, 0.0, 0.0);
    let mut center: f64 = 0.0;
    for (_, y) in &sample {
        center = center.max((harmonic_kernel(&origin, y, 3)? - 3.0 / (4.0 * PI)).abs());
    }
    rows.residual(None, "center_value_n3", center, config.tol("center"), "P(0,y) = 3/(4π)");

    let q: QuadratureRule = ball3_rule(config.ball_quad[0], config.ball_quad[1], config.ball_quad[2])?;
    let eval = KernelEval::new(3, config.eval_radius)?;
    // harmonic polynomials with their values at the origin
    let x1 = || monomial(&[1, 0, 0]);
    let polys: Vec<(ScalarField, f64)> = vec![
        (crate::fields::constant(3, 1.0), 1.0),
        (x1().plus(&crate::fields::constant(3, 0.25))?, 0.25),
        (monomial(&[0, 1, 1]), 0.0),
        (monomial(&[2, 0, 0]).minus(&monomial(&[0, 0, 2]))?.plus(&crate::fields::constant(3, -2.0))?, -2.0),
        (monomial(&[1, 1, 1]).plus(&monomial(&[0, 2, 0]).minus(&monomial(&[0, 0, 2]))?)?, 0.0),
    ];
    let mut worst: f64 = 0.0;
    for (h, at_origin) in &polys {
        let v = eval.project_at(h, std::slice::from_ref(&origin), &q)?[0];
        worst = worst.max((v - at_origin).abs());
    }
    rows.residual(None, "reproducing_center_n3", worst, config.tol("reproducing_n3"), "(Ph)(0) = h(0), P(0,·) = 3/(4π)");
    Ok(())
}
