use std::f64::consts::PI;

use super::{log_log_slope, min_increment, test_points, ExperimentConfig, Provenance, ReportRow, Rows};
use crate::error::Result;
use crate::fields::{
    apply_vector_field, build_counterexample_companion, build_counterexample_fk,
    build_harmonic_monomial, Part, ScalarField,
};
use crate::geometry::{spanning_set_for_ball, VectorFieldSpec};
use crate::kernels::{
    analytic_projection, basis_normalization, project_basis_disk, project_via_analytic,
    BasisExpansion, KernelEval,
};
use crate::quadrature::{disk_rule, l2_norm, sobolev_norm, QuadratureRule};

/// Orders for the Sobolev growth fit.
pub const GROWTH_ORDERS: [u32; 4] = [4, 8, 16, 32];

pub(super) struct Projected {
    pub f: ScalarField,
    pub basis: BasisExpansion,
}

pub(super) fn project_fk(k: u32, degree: usize, q: &QuadratureRule) -> Result<Projected> {
    let f = build_counterexample_fk(k)?;
    let basis = project_basis_disk(&f, degree, q)?;
    Ok(Projected { f, basis })
}

/// `‖Pf_k‖_1 / (‖Nf_k‖ + ‖f_k‖)`.
pub(super) fn normal_only_ratio(p: &Projected, q: &QuadratureRule) -> Result<f64> {
    let nf = apply_vector_field(&p.f, &VectorFieldSpec::radial(2))?;
    let pf1 = sobolev_norm(&p.basis.to_field(), 1, q)?.value;
    Ok(pf1 / (l2_norm(&nf, q)? + l2_norm(&p.f, q)?))
}

pub(super) fn run(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let mut rows = Rows::new("counterexample");
    let q = disk_rule(config.quad[0], config.quad[1])?;
    let degree = config.basis_degree;
    let eval = KernelEval::new(2, config.eval_radius)?;
    let t = spanning_set_for_ball(2)?.get(1)?.clone();
    let n_field = VectorFieldSpec::radial(2);
    let points = test_points(6, 0.5);
    let half_sqrt_pi = PI.sqrt() / 2.0;

    let mut ks = config.k_list.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut scaled_norms = Vec::with_capacity(ks.len());
    for &k in &ks {
        let kk = Some(k);
        let kf = k as f64;
        let mode = k as usize + 1;
        let Projected { f, basis } = project_fk(k, degree, &q)?;
        let nf = apply_vector_field(&f, &n_field)?;

        rows.abs(kk, "norm_f_k", l2_norm(&f, &q)?, half_sqrt_pi, config.tol("closed_norm"), Provenance::Paper, "‖f_k‖² = π/4");
        rows.abs(kk, "norm_Nf_k", l2_norm(&nf, &q)?, half_sqrt_pi, config.tol("closed_norm"), Provenance::Paper, "Nf_k = f_k, norm √π/2");
        let diff = q.l2_norm_fn(|x| Ok(nf.eval_at(x)? - f.eval_at(x)?))?;
        rows.abs(kk, "Nf_k_minus_f_k", diff, 0.0, config.tol("closed_norm"), Provenance::Paper, "Nf_k = f_k");
        let re = build_harmonic_monomial(k + 1, Part::Real);
        let re_ref = PI.sqrt() / (2.0 * kf + 4.0).sqrt();
        rows.abs(kk, "norm_re_z^(k+1)", l2_norm(&re, &q)?, re_ref, config.tol("closed_norm"), Provenance::Paper, "‖Re z^{k+1}‖ = √π/√(2k+4)");

        let keep = format!("({mode},real)");
        rows.residual(kk, "off_mode_mass", basis.off_mode_mass(&[keep.as_str()]), config.tol("off_mode"), "angular orthogonality: only mode (k+1, real)");

        let analytic = project_via_analytic(&f, degree, &q)?;
        let kernel_route = eval.project_at(&f, &points, &q)?;
        let mut worst: f64 = 0.0;
        for (p, kv) in points.iter().zip(&kernel_route) {
            let b = basis.eval(p.coords());
            let a = analytic.eval(p.coords());
            worst = worst.max((kv - b).abs()).max((kv - a).abs()).max((a - b).abs());
        }
        rows.residual(kk, "route_agreement", worst, config.tol("route"), "kernel, basis and analytic routes");

        // Pf_k = c·(k+2)/(k+4)·Re z^{k+1}
        let amplitude = basis.coefficient(&keep).unwrap_or(f64::NAN) * basis_normalization(mode);
        let c = amplitude * (kf + 4.0) / (kf + 2.0);
        rows.info(kk, "leading_constant_c", c, Some(4.0), Provenance::Paper, "Pf_k = 4(k+2)/(k+4) Re z^{k+1}");
        let pf_norm = basis.norm();
        let stated_norm = 2.0 * (2.0 * PI).sqrt() * (kf + 2.0).sqrt() / (kf + 4.0);
        rows.info(kk, "norm_Pf_k", pf_norm, Some(stated_norm), Provenance::Paper, "‖Pf_k‖ = 2√(2π)√(k+2)/(k+4)");

        let companion = build_counterexample_companion(k)?;
        let bg = analytic_projection(&f, Some(&companion), degree, &q)?;
        let coeff_ref = 2.0 * (kf + 2.0) / (kf + 4.0);
        rows.abs(kk, "Bg_k_coefficient", bg[mode].re, coeff_ref, config.tol("analytic_coefficient"), Provenance::Paper, "Bg_k = 2(k+2)/(k+4) z^{k+1}");
        let off = bg
            .iter()
            .enumerate()
            .map(|(m, b)| if m == mode { b.im.abs() } else { b.norm_sqr().sqrt() })
            .fold(0.0, f64::max);
        rows.residual(kk, "Bg_k_off_mode_max", off, config.tol("analytic_coefficient"), "Bg_k is a single monomial");
        let conj = analytic_projection(&f, Some(&companion.scaled(-1.0)), degree, &q)?;
        let conj_max = conj.iter().map(|b| b.norm_sqr().sqrt()).fold(0.0, f64::max);
        rows.abs(kk, "B_conj_g_k_max", conj_max, 0.0, config.tol("analytic_coefficient"), Provenance::Paper, "B ḡ_k = 0");

        let pf = basis.to_field();
        let tpf = apply_vector_field(&pf, &t)?;
        rows.abs(kk, "norm_TPf_over_norm_Pf", l2_norm(&tpf, &q)? / l2_norm(&pf, &q)?, kf + 1.0, config.tol("tangential_ratio"), Provenance::Paper, "‖TPf_k‖ = (k+1)‖Pf_k‖");

        let tf = apply_vector_field(&f, &t)?;
        let claim = q.l2_norm_fn(|x| Ok(tf.eval_at(x)? + (kf + 1.0) * f.eval_at(x)?))?;
        rows.info(kk, "Tf_k_plus_(k+1)f_k", claim, Some(0.0), Provenance::Paper, "Tf_k = −(k+1) f_k");
        let sine = q.l2_norm_fn(|x| Ok(tf.eval_at(x)? + (kf + 1.0) * companion.eval_at(x)?))?;
        rows.residual(kk, "Tf_k_plus_(k+1)r_sin", sine, config.tol("closed_norm"), "T = ∂/∂θ, Tf_k = −(k+1) r sin((k+1)θ)");

        scaled_norms.push((kf + 1.0) * pf_norm);
    }
    if let Some(inc) = min_increment(&scaled_norms) {
        rows.above(None, "growth_(k+1)norm_Pf_k_min_increment", inc, 0.0, Provenance::Paper, "(k+1)Pf_k not uniformly bounded");
    }

    let mut ratios = Vec::new();
    for &k in &GROWTH_ORDERS {
        let r = normal_only_ratio(&project_fk(k, degree, &q)?, &q)?;
        rows.info(Some(k), "sobolev_ratio", r, None, Provenance::None, "‖Pf_k‖_1/(‖Nf_k‖+‖f_k‖)");
        ratios.push(r);
    }
    let ks: Vec<f64> = GROWTH_ORDERS.iter().map(|&k| k as f64).collect();
    rows.abs(None, "sobolev_ratio_growth_exponent", log_log_slope(&ks, &ratios), 0.5, config.tol("growth_exponent"), Provenance::Derived, "‖∇Re z^{k+1}‖² = π(k+1)");
    Ok(rows.finish())
}
