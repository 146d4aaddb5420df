//! Product quadrature on the unit disk and unit 3-ball, and the norms built on it.
//!
//! Integrands are evaluated in parallel but always reduced sequentially in
//! node order with Neumaier summation, so results are bit-reproducible
//! regardless of thread count.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{usage, LabError, Result};
use crate::fields::{MultiIndex, ScalarField, TangentTuple};
use crate::geometry::{ball_volume, TangentialSpanningSet};
use crate::jet::Jet;

pub const DEFAULT_DISK_RESOLUTION: (usize, usize) = (160, 256);
pub const DEFAULT_BALL_RESOLUTION: (usize, usize, usize) = (96, 64, 64);

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|v| v * half).collect(),
    )
}

/// Neumaier's compensated sum, in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Clone, Debug, PartialEq)]
pub enum Resolution {
    Disk { n_r: usize, n_theta: usize, radius: f64 },
    Ball { n_r: usize, n_theta: usize, n_phi: usize },
}

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    resolution: Resolution,
}

/// Polar product rule on the disk: Gauss–Legendre in `r`, trapezoidal in `θ`.
pub fn disk_rule(n_r: usize, n_theta: usize) -> Result<QuadratureRule> {
    disk_rule_with_radius(n_r, n_theta, 1.0)
}

/// Same rule on the disk of radius `radius ≤ 1`.
pub fn disk_rule_with_radius(n_r: usize, n_theta: usize, radius: f64) -> Result<QuadratureRule> {
    if n_r < 2 || n_theta < 4 {
        return usage(format!(
            "disk rule needs n_r ≥ 2 and n_θ ≥ 4, got ({n_r}, {n_theta})"
        ));
    }
    if !(radius > 0.0 && radius <= 1.0) {
        return usage(format!("disk rule radius must lie in (0, 1], got {radius}"));
    }
    let (rs, wr) = gauss_legendre_on(n_r, 0.0, radius);
    let dtheta = 2.0 * PI / n_theta as f64;
    let mut coords = Vec::with_capacity(2 * n_r * n_theta);
    let mut weights = Vec::with_capacity(n_r * n_theta);
    for (r, w) in rs.iter().zip(&wr) {
        for j in 0..n_theta {
            let t = j as f64 * dtheta;
            coords.push(r * t.cos());
            coords.push(r * t.sin());
            weights.push(w * r * dtheta);
        }
    }
    Ok(QuadratureRule {
        dim: 2,
        coords,
        weights,
        resolution: Resolution::Disk {
            n_r,
            n_theta,
            radius,
        },
    })
}

/// Product rule on the unit 3-ball: Gauss–Legendre in `r` (weight `r²`),
/// uniform azimuth (`n_theta` nodes), Gauss–Legendre in the cosine of the
/// polar angle (`n_phi` nodes).
pub fn ball3_rule(n_r: usize, n_theta: usize, n_phi: usize) -> Result<QuadratureRule> {
    if n_r < 2 || n_theta < 4 || n_phi < 4 {
        return usage(format!(
            "ball rule needs resolution ≥ (2, 4, 4), got ({n_r}, {n_theta}, {n_phi})"
        ));
    }
    let (rs, wr) = gauss_legendre_on(n_r, 0.0, 1.0);
    let (cs, wc) = gauss_legendre(n_phi);
    let dtheta = 2.0 * PI / n_theta as f64;
    let mut coords = Vec::with_capacity(3 * n_r * n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_r * n_theta * n_phi);
    for (r, w) in rs.iter().zip(&wr) {
        for (c, v) in cs.iter().zip(&wc) {
            let s = (1.0 - c * c).sqrt();
            for j in 0..n_theta {
                let t = j as f64 * dtheta;
                coords.push(r * s * t.cos());
                coords.push(r * s * t.sin());
                coords.push(r * c);
                weights.push(w * r * r * v * dtheta);
            }
        }
    }
    Ok(QuadratureRule {
        dim: 3,
        coords,
        weights,
        resolution: Resolution::Ball {
            n_r,
            n_theta,
            n_phi,
        },
    })
}

/// Rule for the unit ball of dimension `n ∈ {2, 3}` at the default resolution.
pub fn default_rule(n: usize) -> Result<QuadratureRule> {
    match n {
        2 => disk_rule(DEFAULT_DISK_RESOLUTION.0, DEFAULT_DISK_RESOLUTION.1),
        3 => ball3_rule(
            DEFAULT_BALL_RESOLUTION.0,
            DEFAULT_BALL_RESOLUTION.1,
            DEFAULT_BALL_RESOLUTION.2,
        ),
        _ => usage(format!("quadrature is available for n ∈ {{2, 3}}, got {n}")),
    }
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn resolution(&self) -> &Resolution {
        &self.resolution
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn total_weight(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }

    /// Expected total weight: the volume of the ball the rule covers.
    pub fn covered_volume(&self) -> f64 {
        match self.resolution {
            Resolution::Disk { radius, .. } => PI * radius * radius,
            Resolution::Ball { .. } => ball_volume(3).expect("n = 3"),
        }
    }

    /// Evaluates `f` at every node in parallel; results come back in node order.
    pub fn map_nodes<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&[f64]) -> Result<T> + Sync + Send,
    {
        (0..self.len())
            .into_par_iter()
            .map(|i| f(self.node(i)))
            .collect()
    }

    /// Scalar integrand values with a finiteness check naming the offending node.
    pub fn sample<F>(&self, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync + Send,
    {
        let values = self.map_nodes(f)?;
        self.check_finite(&values)?;
        Ok(values)
    }

    pub(crate) fn check_finite(&self, values: &[f64]) -> Result<()> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::NonFinite {
                node: i,
                coords: self.node(i).to_vec(),
                value: values[i],
            });
        }
        Ok(())
    }

    /// `Σ w_i v_i` in node order.
    pub fn weighted_sum(&self, values: &[f64]) -> f64 {
        compensated_sum(values.iter().zip(&self.weights).map(|(v, w)| v * w))
    }

    /// `Σ w_i v_i²` in node order.
    pub fn weighted_sum_sq(&self, values: &[f64]) -> f64 {
        compensated_sum(values.iter().zip(&self.weights).map(|(v, w)| w * v * v))
    }

    pub fn integrate_fn<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync + Send,
    {
        Ok(self.weighted_sum(&self.sample(f)?))
    }

    /// `(∫ f²)^{1/2}` for a closure integrand.
    pub fn l2_norm_fn<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync + Send,
    {
        Ok(self.weighted_sum_sq(&self.sample(f)?).sqrt())
    }

    fn check_field(&self, f: &ScalarField) -> Result<()> {
        if f.dim() != self.dim {
            return usage(format!(
                "field `{}` of dimension {} on a rule of dimension {}",
                f.label(),
                f.dim(),
                self.dim
            ));
        }
        Ok(())
    }
}

pub fn integrate(f: &ScalarField, q: &QuadratureRule) -> Result<f64> {
    q.check_field(f)?;
    q.integrate_fn(|x| f.eval_at(x))
}

/// `(f, g) = ∫ f g dV`.
pub fn inner_product(f: &ScalarField, g: &ScalarField, q: &QuadratureRule) -> Result<f64> {
    q.check_field(f)?;
    q.check_field(g)?;
    let fv = q.sample(|x| f.eval_at(x))?;
    let gv = q.sample(|x| g.eval_at(x))?;
    Ok(compensated_sum(
        fv.iter()
            .zip(&gv)
            .zip(q.weights())
            .map(|((a, b), w)| w * a * b),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    L2,
    Sobolev(usize),
    Tangential(usize),
    Weighted(usize),
}

/// A norm value with its squared contributions, keyed by derivative label.
#[derive(Clone, Debug, PartialEq)]
pub struct NormReport {
    pub kind: NormKind,
    pub value: f64,
    pub breakdown: Vec<(String, f64)>,
}

impl NormReport {
    fn from_terms(kind: NormKind, breakdown: Vec<(String, f64)>) -> NormReport {
        let value = compensated_sum(breakdown.iter().map(|(_, v)| *v)).sqrt();
        NormReport {
            kind,
            value,
            breakdown,
        }
    }

    pub fn term(&self, label: &str) -> Option<f64> {
        self.breakdown
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| *v)
    }
}

pub fn l2_norm(f: &ScalarField, q: &QuadratureRule) -> Result<f64> {
    Ok(l2_report(f, q)?.value)
}

pub fn l2_report(f: &ScalarField, q: &QuadratureRule) -> Result<NormReport> {
    q.check_field(f)?;
    let v = q.sample(|x| f.eval_at(x))?;
    Ok(NormReport::from_terms(
        NormKind::L2,
        vec![(f.label().to_string(), q.weighted_sum_sq(&v))],
    ))
}

/// Squared-sum columns: one per label, each reduced in node order.
fn column_sums(q: &QuadratureRule, rows: &[Vec<f64>], labels: Vec<String>) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(labels.len());
    for (c, label) in labels.into_iter().enumerate() {
        let column: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        q.check_finite(&column)?;
        out.push((label, q.weighted_sum_sq(&column)));
    }
    Ok(out)
}

/// `‖f‖_k = (Σ_{|α|≤k} ‖D^α f‖²)^{1/2}`.
pub fn sobolev_norm(f: &ScalarField, k: usize, q: &QuadratureRule) -> Result<NormReport> {
    q.check_field(f)?;
    if k > f.max_derivative_order() {
        return usage(format!(
            "Sobolev order {k} exceeds what `{}` can serve ({})",
            f.label(),
            f.max_derivative_order()
        ));
    }
    let alphas = MultiIndex::all_up_to(f.dim(), k);
    let rows: Vec<Vec<f64>> = if f.has_exact_rule() {
        q.map_nodes(|x| {
            let j = f.jet_at(x, k)?;
            Ok(alphas
                .iter()
                .map(|a| j.derivative(a.entries()).expect("within order"))
                .collect())
        })?
    } else {
        q.map_nodes(|x| {
            alphas
                .iter()
                .map(|a| f.derivative_raw(a.entries(), x))
                .collect()
        })?
    };
    let labels = alphas.iter().map(MultiIndex::label).collect();
    Ok(NormReport::from_terms(
        NormKind::Sobolev(k),
        column_sums(q, &rows, labels)?,
    ))
}

/// All `T_J f` values at one point for `|J| ≤ k`, in [`TangentTuple`] order.
pub(crate) fn tuple_values_from_jet(
    x: &[f64],
    jet: Jet,
    k: usize,
    set: &TangentialSpanningSet,
) -> Result<Vec<(TangentTuple, f64)>> {
    let mut level: Vec<(TangentTuple, Jet)> = vec![(TangentTuple::identity(), jet)];
    let mut out: BTreeMap<TangentTuple, f64> = BTreeMap::new();
    for l in 0..=k {
        for (t, j) in &level {
            out.insert(t.clone(), j.value());
        }
        if l == k {
            break;
        }
        let mut next = Vec::with_capacity(level.len() * set.len());
        for (t, j) in &level {
            for idx in 1..=set.len() {
                let mut indices = vec![idx];
                indices.extend_from_slice(t.indices());
                next.push((TangentTuple::new(indices), set.get(idx)?.apply_to_jet(x, j)));
            }
        }
        level = next;
    }
    Ok(out.into_iter().collect())
}

/// `‖f‖_{k,T} = (Σ_{ℓ≤k} Σ_{|J|=ℓ} ‖T_J f‖²)^{1/2}`, over all ordered tuples.
pub fn tangential_sobolev_norm(
    f: &ScalarField,
    k: usize,
    set: &TangentialSpanningSet,
    q: &QuadratureRule,
) -> Result<NormReport> {
    q.check_field(f)?;
    if set.dim() != f.dim() {
        return usage("spanning set and field dimensions differ");
    }
    if k > f.max_derivative_order() {
        return usage(format!(
            "tangential order {k} exceeds what `{}` can serve ({})",
            f.label(),
            f.max_derivative_order()
        ));
    }
    let tuples: Vec<TangentTuple> = (0..=k)
        .flat_map(|l| TangentTuple::all_of_length(set.len(), l))
        .collect();
    let mut sorted = tuples.clone();
    sorted.sort();
    let rows: Vec<Vec<f64>> = if f.has_exact_rule() {
        q.map_nodes(|x| {
            let vals = tuple_values_from_jet(x, f.jet_at(x, k)?, k, set)?;
            Ok(vals.into_iter().map(|(_, v)| v).collect())
        })?
    } else {
        let fields: Vec<ScalarField> = sorted
            .iter()
            .map(|t| crate::fields::apply_tuple(f, t, set))
            .collect::<Result<_>>()?;
        q.map_nodes(|x| fields.iter().map(|g| g.eval_at(x)).collect())?
    };
    let labels = sorted.iter().map(TangentTuple::label).collect();
    Ok(NormReport::from_terms(
        NormKind::Tangential(k),
        column_sums(q, &rows, labels)?,
    ))
}

/// `‖(1 − |x|²)^k f‖`, the boundary-weighted proxy for a negative-order norm.
pub fn weighted_norm(f: &ScalarField, k: usize, q: &QuadratureRule) -> Result<NormReport> {
    q.check_field(f)?;
    let v = q.sample(|x| {
        let w = 1.0 - x.iter().map(|c| c * c).sum::<f64>();
        Ok(w.powi(k as i32) * f.eval_at(x)?)
    })?;
    Ok(NormReport::from_terms(
        NormKind::Weighted(k),
        vec![(format!("(1-|x|^2)^{k}·{}", f.label()), q.weighted_sum_sq(&v))],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{
        build_counterexample_fk, build_harmonic_monomial, constant, monomial, norm_squared, Part,
    };
    use crate::geometry::spanning_set_for_ball;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // exact for degree ≤ 13
        let integral: f64 = x.iter().zip(&w).map(|(t, v)| v * t.powi(12)).sum();
        assert!((integral - 2.0 / 13.0).abs() < 1e-14);
        let (y, _) = gauss_legendre(160);
        assert!(y.windows(2).all(|p| p[0] < p[1]));
        assert!(y[0] > -1.0 && y[159] < 1.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }

    #[test]
    fn disk_rule_examples() {
        let q = disk_rule(160, 256).unwrap();
        assert!((q.total_weight() / PI - 1.0).abs() < 1e-14);
        let x1 = monomial(&[2, 0]);
        assert!((integrate(&x1, &q).unwrap() - PI / 4.0).abs() < 1e-13);
        assert!((integrate(&norm_squared(2), &q).unwrap() - PI / 2.0).abs() < 1e-13);
        assert!(disk_rule(1, 8).is_err());
        assert!(disk_rule(8, 3).is_err());
        assert!(q.nodes().all(|x| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            r > 0.0 && r < 1.0
        }));
    }

    #[test]
    fn ball_rule_examples() {
        let q = ball3_rule(24, 16, 16).unwrap();
        assert!((q.total_weight() / (4.0 * PI / 3.0) - 1.0).abs() < 1e-12);
        assert!((integrate(&monomial(&[0, 0, 2]), &q).unwrap() - 4.0 * PI / 15.0).abs() < 1e-12);
        assert!(integrate(&monomial(&[1, 1, 0]), &q).unwrap().abs() < 1e-14);
        assert!(ball3_rule(2, 4, 3).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let q = disk_rule(40, 64).unwrap();
        let re = build_harmonic_monomial(1, Part::Real);
        let im = build_harmonic_monomial(1, Part::Imag);
        assert!(inner_product(&re, &im, &q).unwrap().abs() < 1e-15);
        let r3 = build_harmonic_monomial(3, Part::Real);
        assert!((inner_product(&r3, &r3, &q).unwrap() - PI / 8.0).abs() < 1e-14);
        assert!((inner_product(&constant(2, 1.0), &norm_squared(2), &q).unwrap() - PI / 2.0).abs() < 1e-14);
        let bad = ScalarField::from_value_fn(2, "blowup", |x| 1.0 / (x[0] - x[0]));
        match inner_product(&bad, &re, &q) {
            Err(LabError::NonFinite { node, .. }) => assert_eq!(node, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sobolev_examples() {
        let q = disk_rule(40, 64).unwrap();
        let x1 = monomial(&[1, 0]);
        let r0 = sobolev_norm(&x1, 0, &q).unwrap();
        assert!((r0.value - l2_norm(&x1, &q).unwrap()).abs() < 1e-15);
        let r1 = sobolev_norm(&x1, 1, &q).unwrap();
        assert!((r1.value - (5.0 * PI).sqrt() / 2.0).abs() < 1e-13);
        let sq: f64 = r1.breakdown.iter().map(|(_, v)| v).sum();
        assert!((sq / (r1.value * r1.value) - 1.0).abs() < 1e-12);
        for k in 1..6u32 {
            let f = build_harmonic_monomial(k + 1, Part::Real);
            let r = sobolev_norm(&f, 1, &q).unwrap();
            let grad = r.term("D^(1,0)").unwrap() + r.term("D^(0,1)").unwrap();
            assert!((grad - PI * (k + 1) as f64).abs() < 1e-11);
        }
        let fd = ScalarField::from_value_fn(2, "fd", |x| x[0]);
        assert!(sobolev_norm(&fd, 5, &q).is_err());
    }

    #[test]
    fn tangential_examples() {
        let q = disk_rule(48, 64).unwrap();
        let set = spanning_set_for_ball(2).unwrap();
        let x1 = monomial(&[1, 0]);
        let r = tangential_sobolev_norm(&x1, 1, &set, &q).unwrap();
        assert!((r.value - (PI / 2.0).sqrt()).abs() < 1e-13);
        let r0 = tangential_sobolev_norm(&x1, 0, &set, &q).unwrap();
        assert!((r0.value - l2_norm(&x1, &q).unwrap()).abs() < 1e-15);
        for k in [1u32, 3, 7] {
            let fk = build_counterexample_fk(k).unwrap();
            let r = tangential_sobolev_norm(&fk, 1, &set, &q).unwrap();
            let expect = PI / 4.0 + ((k + 1) * (k + 1)) as f64 * PI / 4.0;
            assert!((r.value * r.value - expect).abs() < 1e-10 * expect);
        }
        let set3 = spanning_set_for_ball(3).unwrap();
        let q3 = ball3_rule(8, 8, 8).unwrap();
        let r3 = tangential_sobolev_norm(&monomial(&[1, 1, 0]), 2, &set3, &q3).unwrap();
        assert_eq!(r3.breakdown.len(), 1 + 3 + 9);
    }

    #[test]
    fn weighted_examples() {
        let q = disk_rule(40, 64).unwrap();
        let one = constant(2, 1.0);
        assert!((weighted_norm(&one, 1, &q).unwrap().value - (PI / 3.0).sqrt()).abs() < 1e-14);
        for m in [1u32, 4, 9] {
            let h = build_harmonic_monomial(m, Part::Real);
            let mf = m as f64;
            let expect = PI / 2.0 * (1.0 / (mf + 1.0) - 2.0 / (mf + 2.0) + 1.0 / (mf + 3.0));
            let got = weighted_norm(&h, 1, &q).unwrap().value;
            assert!((got * got - expect).abs() < 1e-14);
        }
        let h = build_harmonic_monomial(2, Part::Real);
        assert!((weighted_norm(&h, 0, &q).unwrap().value - l2_norm(&h, &q).unwrap()).abs() < 1e-15);
    }
}
