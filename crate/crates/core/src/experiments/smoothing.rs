use super::counterexample::{normal_only_ratio, project_fk};
use super::{min_increment, ExperimentConfig, Provenance, ReportRow, Rows};
use crate::error::{usage, Result};
use crate::fields::{build_bump_cutoff, build_counterexample_fk, build_polar_mode, monomial, Part, ScalarField};
use crate::geometry::spanning_set_for_ball;
use crate::kernels::project_basis_disk;
use crate::quadrature::{disk_rule, sobolev_norm, tangential_sobolev_norm};

const MONOMIALS: [[u32; 2]; 14] = [
    [0, 0],
    [1, 0],
    [0, 1],
    [2, 0],
    [1, 1],
    [0, 2],
    [3, 0],
    [2, 1],
    [1, 3],
    [4, 0],
    [2, 2],
    [5, 0],
    [3, 3],
    [0, 6],
];
const COUNTEREXAMPLE_ORDERS: [u32; 10] = [1, 2, 3, 4, 6, 8, 10, 12, 14, 16];
const NORMAL_ONLY_ORDERS: [u32; 3] = [4, 8, 16];

/// The 30-member test family: monomials, cut-off angular modes, and `f_j`.
pub fn test_family() -> Result<Vec<ScalarField>> {
    let mut out: Vec<ScalarField> = MONOMIALS.iter().map(|a| monomial(a)).collect();
    let zeta = build_bump_cutoff(0.5, 0.7)?;
    for j in 1..=3 {
        for part in [Part::Real, Part::Imag] {
            out.push(zeta.times(&build_polar_mode(j, part))?);
        }
    }
    for j in COUNTEREXAMPLE_ORDERS {
        out.push(build_counterexample_fk(j)?);
    }
    Ok(out)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(super) fn run(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let orders = config.orders_in(&[1, 2]);
    if orders.is_empty() {
        return usage("the smoothing experiment needs k = 1 or k = 2 in k_list");
    }
    let mut rows = Rows::new("smoothing");
    let q = disk_rule(config.quad[0], config.quad[1])?;
    let set = spanning_set_for_ball(2)?;
    let family = test_family()?;
    let projected: Vec<ScalarField> = family
        .iter()
        .map(|f| Ok(project_basis_disk(f, config.basis_degree, &q)?.to_field()))
        .collect::<Result<_>>()?;
    for &k in &orders {
        let mut ratios = Vec::with_capacity(family.len());
        for (f, pf) in family.iter().zip(&projected) {
            let top = sobolev_norm(pf, k as usize, &q)?.value;
            let bottom = tangential_sobolev_norm(f, k as usize, &set, &q)?.value;
            let r = top / bottom;
            rows.info(Some(k), format!("ratio[{}]", f.label()), r, None, Provenance::None, "‖Pf‖_k/‖f‖_{k,T}");
            ratios.push(r);
        }
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let med = median(&ratios);
        rows.info(Some(k), "family_median", med, None, Provenance::None, "median of ‖Pf‖_k/‖f‖_{k,T}");
        rows.at_most(Some(k), "family_max_over_median", max / med, config.tol("family_spread"), Provenance::Derived, "‖Pf‖_k ≤ c_k‖f‖_{k,T}");
    }

    let mut normal = Vec::new();
    for &j in &NORMAL_ONLY_ORDERS {
        let r = normal_only_ratio(&project_fk(j, config.basis_degree, &q)?, &q)?;
        rows.info(Some(j), "normal_only_ratio", r, None, Provenance::None, "‖Pf_j‖_1/(‖Nf_j‖+‖f_j‖)");
        normal.push(r);
    }
    if let Some(inc) = min_increment(&normal) {
        rows.above(None, "normal_only_ratio_min_increment", inc, 0.0, Provenance::Derived, "‖Pf_j‖_1 grows like √j");
    }
    Ok(rows.finish())
}
