use rand::Rng;

use super::{log_log_slope, rng_for, test_points, ExperimentConfig, ExperimentKind, Provenance, ReportRow, Rows};
use crate::error::{usage, LabError, Result};
use crate::fields::{
    apply_vector_field, build_bump_cutoff, build_harmonic_monomial, linear_combination, monomial,
    MultiIndex, Part, ScalarField,
};
use crate::flow::{
    apply_a, ftc_residual_with, iterated_antiderivative_residual_with, laplace_split_residual,
    prop_decompose_with, split_weight, weighted_bound_probe, AOperator, CollarSpec, FlowMap,
    Integrator, ProbeOutcome, DEFAULT_RK4_STEP,
};
use crate::geometry::{spanning_set_for_ball, BallDomain, Point, VectorFieldSpec};
use crate::quadrature::{ball3_rule, disk_rule, QuadratureRule};

/// The norm-diagnostic slope is fitted over the modes from here up.
pub const SLOPE_MIN_M: u32 = 8;

/// Disk rule for the flow checks; the angular count resolves mode `m`.
pub fn flow_rule(config: &ExperimentConfig, m: u32) -> Result<QuadratureRule> {
    let n_theta = config.flow_quad[1].max(2 * m as usize + 8).div_ceil(4) * 4;
    disk_rule(config.flow_quad[0], n_theta)
}

/// Ten inputs supported in collar annuli with inner radius above 1/e.
pub fn collar_inputs() -> Result<Vec<ScalarField>> {
    let zeta = build_bump_cutoff(0.5, 0.7)?;
    let mut out = vec![zeta.clone()];
    let factors = [
        build_harmonic_monomial(1, Part::Real),
        build_harmonic_monomial(2, Part::Imag),
        build_harmonic_monomial(3, Part::Real),
        monomial(&[2, 0]),
        monomial(&[1, 1]),
        build_harmonic_monomial(5, Part::Real),
        monomial(&[0, 3]),
        build_harmonic_monomial(8, Part::Real),
    ];
    for f in &factors {
        out.push(zeta.times(f)?);
    }
    out.push(build_bump_cutoff(0.4, 0.8)?.times(&build_harmonic_monomial(1, Part::Imag))?);
    Ok(out)
}

fn random_polynomial(n: usize, degree: usize, rng: &mut impl Rng) -> Result<ScalarField> {
    let terms: Vec<(f64, ScalarField)> = MultiIndex::all_up_to(n, degree)
        .into_iter()
        .map(|a| {
            let e: Vec<u32> = a.entries().iter().map(|&v| v as u32).collect();
            (rng.random_range(-1.0..1.0), monomial(&e))
        })
        .collect();
    linear_combination(&terms)
}

pub(super) fn run(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let orders = config.orders_in(&[1, 2, 3]);
    if orders.is_empty() {
        return usage("the decomposition experiment needs k ∈ {1, 2, 3} in k_list");
    }
    let mut rows = Rows::new("decomposition");
    let mut rng = rng_for(config, ExperimentKind::Decomposition);
    let nodes = config.s_nodes;
    let inputs = collar_inputs()?;
    let q_inputs = flow_rule(config, 8)?;

    for g in &inputs {
        let r = ftc_residual_with(g, &q_inputs, nodes)?;
        rows.residual(None, format!("ftc_residual[{}]", g.label()), r, config.tol("ftc"), "g = 𝔄[Ng] for collar-supported g");
    }
    let shallow = build_bump_cutoff(0.3, 0.6)?;
    let rejected = matches!(ftc_residual_with(&shallow, &q_inputs, nodes), Err(LabError::Precondition(_)));
    rows.abs(None, "ftc_rejects_support_below_1/e", if rejected { 1.0 } else { 0.0 }, 1.0, 0.0, Provenance::Derived, "g(x/e) must vanish");

    for &k in &orders {
        for g in &inputs {
            let r = iterated_antiderivative_residual_with(g, k as usize, &q_inputs, nodes)?;
            rows.residual(Some(k), format!("lemma_residual[{}]", g.label()), r, config.tol("lemma"), "g = (𝔄²L)^k g + Σ_{ℓ<k} (𝔄²L)^ℓ 𝔄²[aΔg]");
        }
    }

    let split_rules = [disk_rule(12, 16)?, ball3_rule(6, 8, 16)?];
    for (n, q) in [2usize, 3].into_iter().zip(&split_rules) {
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let p = random_polynomial(n, 4, &mut rng)?;
            worst = worst.max(laplace_split_residual(&p, n, q)?);
        }
        rows.residual(None, format!("laplace_split_max_n{n}"), worst, config.tol("split"), "|x|²Δ = N² + (n−2)N + Σ(T^{ij})²");
        let domain = BallDomain::new(n)?;
        let mut worst_a: f64 = 0.0;
        for _ in 0..50 {
            let x = domain.sample_interior(&mut rng, 0.99);
            worst_a = worst_a.max((split_weight(&x)? - x.norm_sqr()).abs());
        }
        rows.residual(None, format!("split_weight_n{n}"), worst_a, config.tol("split_weight"), "a = |x|² from the pointwise solve");
    }

    let disk = BallDomain::disk();
    let closed = FlowMap::radial(2);
    let rk4 = FlowMap::new(VectorFieldSpec::radial(2), CollarSpec::default(), Integrator::Rk4 { step: DEFAULT_RK4_STEP })?;
    let mut group = [0.0f64; 2];
    let mut against_closed: f64 = 0.0;
    for _ in 0..20 {
        let x = disk.sample_interior(&mut rng, 1.0);
        let s: f64 = rng.random_range(-0.5..0.0);
        let t: f64 = rng.random_range(-0.5..0.0);
        for (slot, flow) in group.iter_mut().zip([&closed, &rk4]) {
            let two = flow.eval(s, &flow.eval(t, &x)?)?;
            let one = flow.eval(s + t, &x)?;
            *slot = slot.max(dist(&two, &one));
        }
        against_closed = against_closed.max(dist(&rk4.eval(s + t, &x)?, &closed.eval(s + t, &x)?));
    }
    rows.residual(None, "flow_group_closed_form", group[0], config.tol("flow_group"), "φ(s, φ(t, x)) = φ(s+t, x)");
    rows.residual(None, "flow_group_rk4", group[1], config.tol("flow_group"), "φ(s, φ(t, x)) = φ(s+t, x)");
    rows.residual(None, "rk4_vs_closed_form", against_closed, config.tol("flow_group"), "φ(t, x) = eᵗx");

    let t1 = spanning_set_for_ball(2)?.get(1)?.clone();
    let g = &inputs[3];
    let a = AOperator::power(2, 1).with_nodes(nodes);
    let lhs = apply_a(&a, &apply_vector_field(g, &t1)?)?;
    let rhs = apply_vector_field(&apply_a(&a, g)?, &t1)?;
    let mut comm: f64 = 0.0;
    for p in test_points(16, 0.98) {
        comm = comm.max((lhs.eval(&p)? - rhs.eval(&p)?).abs());
    }
    rows.residual(None, format!("commutation_A_T[{}]", g.label()), comm, config.tol("commutation"), "𝔄T = T𝔄 for the radial flow");

    let zeta = build_bump_cutoff(0.5, 0.7)?;
    for &k in &orders {
        let mut ms = Vec::new();
        let mut ratios = Vec::new();
        for &m in &config.decomposition_m {
            let q = flow_rule(config, m)?;
            let h = build_harmonic_monomial(m, Part::Real);
            let d = prop_decompose_with(&h, k as usize, &zeta, &q, nodes)?;
            rows.residual(Some(k), format!("decomposition_residual[m={m:02}]"), d.residual, config.tol("decomposition"), "ζh = Σ_ℓ T^ℓ H_ℓ");
            rows.info(Some(k), format!("top_ratio[m={m:02}]"), d.top_ratio(), None, Provenance::None, "‖H_k‖/‖(1−|x|²)^k h‖");
            if m >= SLOPE_MIN_M {
                ms.push(m as f64);
                ratios.push(d.top_ratio());
            }
        }
        if ms.len() >= 2 {
            rows.abs(Some(k), "top_ratio_slope_in_m", log_log_slope(&ms, &ratios), 0.0, config.tol("slope"), Provenance::Derived, "‖H‖ ≤ C_k‖h‖_{−k}, weighted proxy");
        }
    }

    let q_probe = flow_rule(config, 4)?;
    let probes = [
        (AOperator::power(2, 1).with_nodes(nodes), zeta.clone(), "A"),
        (AOperator::power(2, 2).with_nodes(nodes), zeta.times(&build_harmonic_monomial(4, Part::Real))?, "A^2"),
    ];
    for (op, g, name) in &probes {
        for l in 0..=4 {
            let v = match weighted_bound_probe(op, g, l, &q_probe)? {
                ProbeOutcome::Ratio(r) => r,
                ProbeOutcome::ZeroInput => f64::NAN,
            };
            rows.info(None, format!("weighted_probe_{name}[{}][l={l}]", g.label()), v, None, Provenance::None, "‖t_x^ℓ A g‖/Σ‖t_x^{ℓ+k} D^β g‖");
        }
    }
    Ok(rows.finish())
}

fn dist(a: &Point, b: &Point) -> f64 {
    a.coords()
        .iter()
        .zip(b.coords())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
