//! Flow of a transversal field, the antiderivative operator `𝔄` along it, and
//! the identities built from `𝔄`: the fundamental theorem `g = 𝔄[Ng]`, the
//! elliptic split of `N² − aΔ`, its iteration, and the constructive
//! tangential decomposition of `ζh` on the disk.
//!
//! For the radial field `N = Σ x_j ∂_j` the flow is `φ(t,x) = eᵗx`. An
//! `ℓ`-fold composition `𝔄^ℓ` then collapses to one integral
//! `∫₀^ℓ p_ℓ(u) g(e^{−u}x) du` with `p_ℓ` the density of a sum of `ℓ`
//! independent uniforms on `[0,1]`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{usage, LabError, Result};
use crate::fields::{
    apply_tuple, apply_vector_field, harmonicity_residual, laplacian, linear_combination,
    norm_squared, FieldRule, MultiIndex, ScalarField, Support, TangentTuple,
};
use crate::geometry::{spanning_set_for_ball, FieldKind, Point, VectorFieldSpec};
use crate::jet::Jet;
use crate::quadrature::{gauss_legendre_on, weighted_norm, QuadratureRule};

pub const DEFAULT_S_NODES: usize = 64;
pub const DEFAULT_COLLAR_INNER: f64 = 0.45;
pub const RK4_MAX_STEP: f64 = 1.0 / 64.0;
pub const DEFAULT_RK4_STEP: f64 = 1.0 / 128.0;
const E_INV: f64 = 0.367_879_441_171_442_33;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Integrator {
    ClosedForm,
    Rk4 { step: f64 },
}

/// The collar `{ρ_U < |x| < 1 + δ}` around the boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollarSpec {
    pub inner_radius: f64,
    pub margin: f64,
}

impl CollarSpec {
    pub fn new(inner_radius: f64, margin: f64) -> Result<CollarSpec> {
        if !(E_INV < inner_radius && inner_radius < 1.0) {
            return usage(format!(
                "collar inner radius must lie in (1/e, 1), got {inner_radius}"
            ));
        }
        if margin.is_nan() || margin <= 0.0 {
            return usage("collar margin must be positive");
        }
        Ok(CollarSpec {
            inner_radius,
            margin,
        })
    }
}

impl Default for CollarSpec {
    fn default() -> Self {
        CollarSpec {
            inner_radius: DEFAULT_COLLAR_INNER,
            margin: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowMap {
    field: VectorFieldSpec,
    collar: CollarSpec,
    integrator: Integrator,
}

impl FlowMap {
    /// Radial field with the closed-form flow `eᵗx`.
    pub fn radial(dim: usize) -> FlowMap {
        FlowMap {
            field: VectorFieldSpec::radial(dim),
            collar: CollarSpec::default(),
            integrator: Integrator::ClosedForm,
        }
    }

    pub fn new(field: VectorFieldSpec, collar: CollarSpec, integrator: Integrator) -> Result<FlowMap> {
        match field.kind() {
            FieldKind::Rotation(..) => {
                return usage(format!("{} is tangential, not transversal", field.label()))
            }
            FieldKind::Generic => {
                if integrator == Integrator::ClosedForm {
                    return usage("closed-form flow is only available for the radial field");
                }
                // transversal at the boundary: ⟨N(x), x⟩ > 0 on a fixed ring of points
                for i in 0..64 {
                    let t = i as f64 / 64.0 * std::f64::consts::TAU;
                    let mut x = vec![0.0; field.dim()];
                    x[0] = t.cos();
                    x[1] = t.sin();
                    let v = field.at(&x);
                    if v.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() <= 0.0 {
                        return usage(format!("{} is not transversal at the boundary", field.label()));
                    }
                }
            }
            FieldKind::Radial => {}
        }
        if let Integrator::Rk4 { step } = integrator {
            if !(step > 0.0 && step <= RK4_MAX_STEP) {
                return usage(format!("RK4 step must lie in (0, 1/64], got {step}"));
            }
        }
        Ok(FlowMap {
            field,
            collar,
            integrator,
        })
    }

    pub fn field(&self) -> &VectorFieldSpec {
        &self.field
    }

    pub fn collar(&self) -> CollarSpec {
        self.collar
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }

    pub fn is_closed_form(&self) -> bool {
        self.integrator == Integrator::ClosedForm
    }

    /// `φ(t, x)` for `|t| ≤ 1`.
    pub fn eval(&self, t: f64, x: &Point) -> Result<Point> {
        if t.is_nan() || t.abs() > 1.0 {
            return usage(format!("flow time must satisfy |t| ≤ 1, got {t}"));
        }
        if x.dim() != self.field.dim() {
            return usage("point and field dimensions differ");
        }
        Point::new(self.eval_raw(t, x.coords()))
    }

    pub(crate) fn eval_raw(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match self.integrator {
            Integrator::ClosedForm => {
                let s = t.exp();
                x.iter().map(|v| v * s).collect()
            }
            Integrator::Rk4 { step } => {
                let steps = ((t.abs() / step).ceil() as usize).max(1);
                let h = t / steps as f64;
                let mut y = x.to_vec();
                let f = |p: &[f64]| self.field.at(p);
                for _ in 0..steps {
                    let k1 = f(&y);
                    let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
                    let k2 = f(&y2);
                    let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
                    let k3 = f(&y3);
                    let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
                    let k4 = f(&y4);
                    for i in 0..y.len() {
                        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }
                y
            }
        }
    }

    /// Forward time `t_x` with `φ(t_x, x)` on the boundary sphere.
    pub fn boundary_hit_time(&self, x: &Point) -> Result<f64> {
        let r = x.norm();
        if r == 0.0 {
            return Err(LabError::Domain(
                "the flow from the origin never reaches the boundary".into(),
            ));
        }
        if r > 1.0 {
            return usage(format!("boundary hit time needs |x| ≤ 1, got {r}"));
        }
        match (self.field.kind(), self.integrator) {
            (FieldKind::Radial, Integrator::ClosedForm) => Ok(-r.ln()),
            _ => {
                // march forward in unit steps, then bisect
                let norm = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut base = x.coords().to_vec();
                let mut t0 = 0.0;
                for _ in 0..64 {
                    let next = self.eval_raw(1.0, &base);
                    if norm(&next) >= 1.0 {
                        let (mut lo, mut hi) = (0.0, 1.0);
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            if norm(&self.eval_raw(mid, &base)) >= 1.0 {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        return Ok(t0 + 0.5 * (lo + hi));
                    }
                    base = next;
                    t0 += 1.0;
                }
                Err(LabError::Domain("flow does not reach the boundary within t = 64".into()))
            }
        }
    }
}

/// `φ(t, x)` for the radial field.
pub fn flow_map_eval(t: f64, x: &Point) -> Result<Point> {
    FlowMap::radial(x.dim()).eval(t, x)
}

/// `t_x = −ln|x|` for the radial field.
pub fn boundary_hit_time(x: &Point) -> Result<f64> {
    FlowMap::radial(x.dim()).boundary_hit_time(x)
}

/// Density of the sum of `j` independent uniforms on `[0, 1]`.
pub fn irwin_hall_density(j: usize, u: f64) -> f64 {
    if j == 0 || u < 0.0 || u > j as f64 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut binom = 1.0;
    let mut fact = 1.0;
    for i in 1..j {
        fact *= i as f64;
    }
    for i in 0..=(u.floor() as usize).min(j) {
        if i > 0 {
            binom *= (j - i + 1) as f64 / i as f64;
        }
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * (u - i as f64).powi(j as i32 - 1);
    }
    acc / fact
}

/// Smooth weight `γ(s, x)` written over jets in `x`.
pub type GammaFn = dyn Fn(f64, &[Jet]) -> Jet + Send + Sync;

/// `s^μ γ(s, x)` multiplying the integrand of a single `𝔄`.
#[derive(Clone)]
pub struct Weight {
    pub mu: u32,
    pub gamma: Option<Arc<GammaFn>>,
}

impl std::fmt::Debug for Weight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Weight(s^{}, γ: {})", self.mu, self.gamma.is_some())
    }
}

/// A concrete member of the antiderivative classes: `𝔄^ℓ`, or a single
/// weighted `∫_{−1}^0 s^μ γ(s,x) g(φ(s,x)) ds`.
#[derive(Clone, Debug)]
pub struct AOperator {
    pub length: usize,
    /// per-factor weight exponents (bookkeeping)
    pub mu: Vec<u32>,
    /// derivative budget (bookkeeping, used by the weighted probe)
    pub nu: usize,
    pub weight: Option<Weight>,
    /// Gauss nodes per unit of flow time
    pub nodes: usize,
    pub flow: FlowMap,
}

impl AOperator {
    /// `𝔄^ℓ` along the radial flow.
    pub fn power(dim: usize, length: usize) -> AOperator {
        AOperator {
            length,
            mu: vec![0; length],
            nu: 0,
            weight: None,
            nodes: DEFAULT_S_NODES,
            flow: FlowMap::radial(dim),
        }
    }

    pub fn weighted(dim: usize, weight: Weight) -> AOperator {
        AOperator {
            length: 1,
            mu: vec![weight.mu],
            nu: 0,
            weight: Some(weight),
            nodes: DEFAULT_S_NODES,
            flow: FlowMap::radial(dim),
        }
    }

    pub fn with_nodes(mut self, nodes: usize) -> AOperator {
        self.nodes = nodes;
        self
    }

    pub fn with_flow(mut self, flow: FlowMap) -> AOperator {
        self.flow = flow;
        self
    }

    pub fn with_budget(mut self, nu: usize) -> AOperator {
        self.nu = nu;
        self
    }

    fn validate(&self, g: &ScalarField) -> Result<()> {
        if self.nodes < 1 {
            return usage("the s-quadrature needs at least one node");
        }
        if self.weight.is_some() && self.length != 1 {
            return usage("weighted operators are single integrals (length 1)");
        }
        if g.dim() != self.flow.field().dim() {
            return usage("field and flow dimensions differ");
        }
        Ok(())
    }
}

/// Radial `𝔄^ℓ` (optionally weighted) with exact jets.
struct RadialA {
    g: ScalarField,
    length: usize,
    weight: Option<Weight>,
    nodes: usize,
    inner: f64,
    breaks: Vec<f64>,
}

impl RadialA {
    /// Quadrature in `u = −s`: `(u, w·p_ℓ(u))`, cut where `e^{−u}|x|` leaves the support.
    fn u_rule(&self, norm: f64) -> Vec<(f64, f64)> {
        u_nodes(self.length, self.inner, &self.breaks, self.nodes, norm)
            .into_iter()
            .map(|(u, w)| {
                let dens = match &self.weight {
                    None => irwin_hall_density(self.length, u),
                    Some(wt) => (-u).powi(wt.mu as i32),
                };
                (u, w * dens)
            })
            .collect()
    }
}

/// Plain Gauss nodes `(u, w)` on `[0, min(ℓ, ln(|x|/inner))]`, split at the
/// integers below `ℓ` and where `e^{−u}|x|` crosses a break radius.
fn u_nodes(length: usize, inner: f64, breaks: &[f64], nodes: usize, norm: f64) -> Vec<(f64, f64)> {
    let mut u_max = length as f64;
    if inner > 0.0 {
        if norm <= inner {
            return Vec::new();
        }
        u_max = u_max.min((norm / inner).ln());
    }
    let mut cuts: Vec<f64> = (1..length).map(|j| j as f64).collect();
    cuts.extend(
        breaks
            .iter()
            .filter(|&&rho| rho > 0.0 && rho < norm)
            .map(|rho| (norm / rho).ln()),
    );
    cuts.retain(|&c| c > 0.0 && c < u_max);
    cuts.push(u_max);
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut a = 0.0;
    for b in cuts {
        if b - a < 1e-15 {
            continue;
        }
        let (us, ws) = gauss_legendre_on(nodes, a, b);
        out.extend(us.into_iter().zip(ws));
        a = b;
    }
    out
}

impl FieldRule for RadialA {
    fn value(&self, x: &[f64]) -> Result<f64> {
        if self.length == 0 {
            return self.g.eval_at(x);
        }
        if self.weight.as_ref().is_some_and(|w| w.gamma.is_some()) {
            return Ok(self.jet(x, 0)?.value());
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut acc = 0.0;
        let mut y = vec![0.0; x.len()];
        for (u, w) in self.u_rule(norm) {
            let s = (-u).exp();
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = s * xi;
            }
            acc += w * self.g.eval_at(&y)?;
        }
        Ok(acc)
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        if self.length == 0 {
            return self.g.jet_at(x, order);
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut acc = Jet::zero(x.len(), order);
        let mut y = vec![0.0; x.len()];
        for (u, w) in self.u_rule(norm) {
            let s = (-u).exp();
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = s * xi;
            }
            let mut term = self.g.jet_at(&y, order)?.scale_argument(s);
            if let Some(Weight { gamma: Some(gamma), .. }) = &self.weight {
                term = term * gamma(-u, &Jet::seed(x, order));
            }
            acc.add_scaled(&term, w);
        }
        Ok(acc)
    }

    fn exact(&self) -> bool {
        self.g.has_exact_rule()
    }
}

/// Single `𝔄` along a numerically integrated flow; values only.
struct FlowA {
    g: ScalarField,
    flow: FlowMap,
    weight: Option<Weight>,
    nodes: usize,
}

impl FieldRule for FlowA {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let (ss, ws) = gauss_legendre_on(self.nodes, -1.0, 0.0);
        let mut acc = 0.0;
        for (s, w) in ss.into_iter().zip(ws) {
            let mut factor = w;
            if let Some(wt) = &self.weight {
                factor *= s.powi(wt.mu as i32);
                if let Some(gamma) = &wt.gamma {
                    factor *= gamma(s, &Jet::seed(x, 0)).value();
                }
            }
            acc += factor * self.g.eval_at(&self.flow.eval_raw(s, x))?;
        }
        Ok(acc)
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        if order == 0 {
            return Ok(Jet::constant(x.len(), 0, self.value(x)?));
        }
        Err(LabError::NoExactRule("antiderivative along a numerical flow".into()))
    }

    fn exact(&self) -> bool {
        false
    }
}

/// `𝔄[g](x) = ∫_{−1}^0 g(φ(s,x)) ds`, composed `ℓ` times or weighted.
///
/// The integral is evaluated at every `x`, not only inside the collar; for
/// `g ≡ 1` this gives `𝔄[g] ≡ 1`.
pub fn apply_a(op: &AOperator, g: &ScalarField) -> Result<ScalarField> {
    op.validate(g)?;
    let label = match (&op.weight, op.length) {
        (Some(w), _) => format!("𝔄[s^{}·{}]", w.mu, g.label()),
        (None, 1) => format!("𝔄[{}]", g.label()),
        (None, l) => format!("𝔄^{l}[{}]", g.label()),
    };
    let support = match g.support() {
        Support::Whole => Support::Whole,
        Support::Annulus { inner, outer } => Support::Annulus { inner, outer },
    };
    if op.flow.is_closed_form() {
        let rule = RadialA {
            g: g.clone(),
            length: op.length,
            weight: op.weight.clone(),
            nodes: op.nodes,
            inner: g.support().inner_radius(),
            breaks: g.radial_breaks().to_vec(),
        };
        // the output is non-analytic where the window [e^{−ℓ}|x|, |x|] has an end on a break
        let shifted: Vec<f64> = g
            .radial_breaks()
            .iter()
            .flat_map(|rho| (0..=op.length).map(move |j| rho * (j as f64).exp()))
            .filter(|&r| r < 1.0 + 1e-12)
            .collect();
        return Ok(ScalarField::from_rule(g.dim(), &label, rule)
            .with_support(support)
            .with_radial_breaks(&shifted));
    }
    let mut out = g.clone();
    for _ in 0..op.length {
        out = ScalarField::from_rule(
            g.dim(),
            &label,
            FlowA {
                g: out,
                flow: op.flow.clone(),
                weight: op.weight.clone(),
                nodes: op.nodes,
            },
        );
    }
    Ok(out)
}

/// Applies `𝔄` one factor at a time (each factor a separate integral).
/// Kept as an independent cross-check of the collapsed form.
pub fn apply_a_nested(op: &AOperator, g: &ScalarField) -> Result<ScalarField> {
    op.validate(g)?;
    let single = AOperator {
        length: 1,
        ..op.clone()
    };
    let mut out = g.clone();
    for _ in 0..op.length {
        out = apply_a(&single, &out)?;
    }
    Ok(out)
}

fn require_collar_support(g: &ScalarField) -> Result<f64> {
    match g.support() {
        Support::Annulus { inner, .. } if inner > E_INV => Ok(inner),
        Support::Annulus { inner, .. } => Err(LabError::Precondition(format!(
            "`{}` is supported down to |x| = {inner} ≤ 1/e, so g(x/e) need not vanish and the unit-time flow does not leave its support",
            g.label()
        ))),
        Support::Whole => Err(LabError::Precondition(format!(
            "`{}` is not supported in a collar annulus with inner radius > 1/e, so g(x/e) need not vanish",
            g.label()
        ))),
    }
}

/// `‖g − 𝔄[Ng]‖` for collar-supported `g`.
pub fn ftc_residual(g: &ScalarField, q: &QuadratureRule) -> Result<f64> {
    ftc_residual_with(g, q, DEFAULT_S_NODES)
}

pub fn ftc_residual_with(g: &ScalarField, q: &QuadratureRule, nodes: usize) -> Result<f64> {
    require_collar_support(g)?;
    let ng = apply_vector_field(g, &VectorFieldSpec::radial(g.dim()))?;
    let ang = apply_a(&AOperator::power(g.dim(), 1).with_nodes(nodes), &ng)?;
    q.l2_norm_fn(|x| Ok(g.eval_at(x)? - ang.eval_at(x)?))
}

/// `Lf = N²f − |x|²Δf`, the dilation-invariant operator of the elliptic split.
pub fn split_operator(f: &ScalarField) -> Result<ScalarField> {
    let label = format!("L[{}]", f.label());
    if f.has_exact_rule() {
        return Ok(ScalarField::from_rule(f.dim(), &label, SplitRule { f: f.clone() })
            .with_support(f.support())
            .with_radial_breaks(f.radial_breaks()));
    }
    let n = VectorFieldSpec::radial(f.dim());
    let nnf = apply_vector_field(&apply_vector_field(f, &n)?, &n)?;
    let a_lap = norm_squared(f.dim()).times(&laplacian(f)?)?;
    Ok(nnf.minus(&a_lap)?.with_label(&label))
}

/// `L` on exact jets in one pass (the generic composition evaluates `f` twice).
struct SplitRule {
    f: ScalarField,
}

impl FieldRule for SplitRule {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.jet(x, 0)?.value())
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        Ok(split_jet(x, &self.f.jet_at(x, order + 2)?))
    }

    fn exact(&self) -> bool {
        true
    }
}

/// `Δf` on a jet; two orders are lost.
fn laplacian_jet(f: &Jet) -> Jet {
    let mut acc = Jet::zero(f.dim(), f.order() - 2);
    for v in 0..f.dim() {
        acc = acc + f.partial(v).partial(v);
    }
    acc
}

/// `|x|²Δf` on a jet at `x`.
fn a_laplacian_jet(x: &[f64], f: &Jet) -> Jet {
    let lap = laplacian_jet(f);
    let vars = Jet::seed(x, lap.order());
    let mut r2 = Jet::zero(x.len(), lap.order());
    for v in &vars {
        r2 = r2 + v * v;
    }
    &r2 * &lap
}

/// `N²f − |x|²Δf` on a jet at `x`.
fn split_jet(x: &[f64], f: &Jet) -> Jet {
    let n = VectorFieldSpec::radial(x.len());
    let nnf = n.apply_to_jet(x, &n.apply_to_jet(x, f));
    nnf - a_laplacian_jet(x, f)
}

/// A map from the jet of `g` at `y` to the jet of an integrand at `y`.
type JetMap = Box<dyn Fn(&[f64], &Jet) -> Jet + Send + Sync>;

/// `𝔄^length[map(g)]`, wanted as a jet of `order` at `x`.
struct RayTerm {
    length: usize,
    order: usize,
    map: JetMap,
}

/// Radial `𝔄`-integrals of several integrands derived from one field `g`.
///
/// All lengths here are at least the collar escape time `ln(|x|/ρ₀) < 1`, so
/// one set of `u`-nodes serves every term and `g` is expanded once per node.
fn shared_ray_jets(
    g: &ScalarField,
    g_order: usize,
    terms: &[RayTerm],
    nodes: usize,
    x: &[f64],
) -> Result<Vec<Jet>> {
    let dim = x.len();
    let mut acc: Vec<Jet> = terms.iter().map(|t| Jet::zero(dim, t.order)).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let inner = g.support().inner_radius();
    let max_len = terms.iter().map(|t| t.length).max().unwrap_or(0);
    let mut y = vec![0.0; dim];
    for (u, w) in u_nodes(max_len, inner, g.radial_breaks(), nodes, norm) {
        let s = (-u).exp();
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = s * xi;
        }
        let gj = g.jet_at(&y, g_order)?;
        for (a, t) in acc.iter_mut().zip(terms) {
            let dens = irwin_hall_density(t.length, u);
            if dens == 0.0 {
                continue;
            }
            let term = (t.map)(&y, &gj).truncate(t.order).scale_argument(s);
            a.add_scaled(&term, w * dens);
        }
    }
    Ok(acc)
}

fn split_power_jet(x: &[f64], f: Jet, times: usize) -> Jet {
    (0..times).fold(f, |j, _| split_jet(x, &j))
}

/// `‖(N² − |x|²Δ + Σ_{i<j}(T^{ij})² + (n−2)N) g‖`; zero for every smooth `g`.
pub fn laplace_split_residual(g: &ScalarField, n: usize, q: &QuadratureRule) -> Result<f64> {
    if g.dim() != n {
        return usage("field dimension differs from n");
    }
    let set = spanning_set_for_ball(n)?;
    let radial = VectorFieldSpec::radial(n);
    let mut terms = vec![(1.0, split_operator(g)?)];
    for t in set.fields() {
        terms.push((1.0, apply_vector_field(&apply_vector_field(g, t)?, t)?));
    }
    if n > 2 {
        terms.push(((n - 2) as f64, apply_vector_field(g, &radial)?));
    }
    let total = linear_combination(&terms)?;
    q.l2_norm_fn(|x| total.eval_at(x))
}

/// Minimal-norm coefficients of `∂/∂x_k = a_k^0 N + Σ_j a_k^j T_j` at `x`,
/// one row per `k`, `[a_k^0, a_k^1, …, a_k^m]`.
pub fn transversal_coefficients(x: &Point) -> Result<Vec<Vec<f64>>> {
    let n = x.dim();
    let set = spanning_set_for_ball(n)?;
    if x.norm() == 0.0 {
        return Err(LabError::Domain("the radial field vanishes at the origin".into()));
    }
    // columns: N(x), T_1(x), …
    let mut cols = vec![VectorFieldSpec::radial(n).at(x.coords())];
    cols.extend(set.fields().iter().map(|t| t.at(x.coords())));
    // V Vᵀ (n×n)
    let mut g = vec![vec![0.0; n]; n];
    for c in &cols {
        for i in 0..n {
            for j in 0..n {
                g[i][j] += c[i] * c[j];
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let y = solve_dense(g.clone(), e)?;
        out.push(
            cols.iter()
                .map(|c| c.iter().zip(&y).map(|(a, b)| a * b).sum())
                .collect(),
        );
    }
    Ok(out)
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if a[piv][col].abs() < 1e-300 {
            return Err(LabError::Domain("singular transversal system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot = &upper[col];
        for (i, row) in lower.iter_mut().enumerate() {
            let f = row[col] / pivot[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
            b[col + 1 + i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

/// The function `a` with `a^{−1} = Σ_k (a_k^0)²`, from the pointwise solve.
pub fn split_weight(x: &Point) -> Result<f64> {
    let rows = transversal_coefficients(x)?;
    Ok(1.0 / rows.iter().map(|r| r[0] * r[0]).sum::<f64>())
}

fn power_of(f: &ScalarField, times: usize, op: impl Fn(&ScalarField) -> Result<ScalarField>) -> Result<ScalarField> {
    let mut out = f.clone();
    for _ in 0..times {
        out = op(&out)?;
    }
    Ok(out)
}

/// Right-hand side of the iterated antiderivative identity,
/// `(𝔄²L)^k g + Σ_{ℓ<k} (𝔄²L)^ℓ 𝔄²[aΔg]`, with `(𝔄²L)^ℓ = 𝔄^{2ℓ}L^ℓ`.
pub fn iterated_antiderivative(g: &ScalarField, k: usize, nodes: usize) -> Result<ScalarField> {
    let dim = g.dim();
    let a = |len: usize| AOperator::power(dim, len).with_nodes(nodes);
    let mut terms = vec![(1.0, apply_a(&a(2 * k), &power_of(g, k, split_operator)?)?)];
    let a_lap = norm_squared(dim).times(&laplacian(g)?)?;
    for l in 0..k {
        let inner = power_of(&a_lap, l, split_operator)?;
        terms.push((1.0, apply_a(&a(2 * l + 2), &inner)?));
    }
    linear_combination(&terms)
}

/// `‖g − RHS‖` for the iterated identity, `k ∈ {1, 2, 3}`.
pub fn iterated_antiderivative_residual(g: &ScalarField, k: usize, q: &QuadratureRule) -> Result<f64> {
    iterated_antiderivative_residual_with(g, k, q, DEFAULT_S_NODES)
}

pub fn iterated_antiderivative_residual_with(
    g: &ScalarField,
    k: usize,
    q: &QuadratureRule,
    nodes: usize,
) -> Result<f64> {
    if !(1..=3).contains(&k) {
        return usage(format!("iteration order must be in 1..=3, got {k}"));
    }
    require_collar_support(g)?;
    if !g.has_exact_rule() {
        let rhs = iterated_antiderivative(g, k, nodes)?;
        return q.l2_norm_fn(|x| Ok(g.eval_at(x)? - rhs.eval_at(x)?));
    }
    let mut terms = vec![RayTerm {
        length: 2 * k,
        order: 0,
        map: Box::new(move |y, j| split_power_jet(y, j.clone(), k)),
    }];
    for l in 0..k {
        terms.push(RayTerm {
            length: 2 * l + 2,
            order: 0,
            map: Box::new(move |y, j| split_power_jet(y, a_laplacian_jet(y, j), l)),
        });
    }
    q.l2_norm_fn(|x| {
        let rhs: f64 = shared_ray_jets(g, 2 * k, &terms, nodes, x)?
            .iter()
            .map(Jet::value)
            .sum();
        Ok(g.eval_at(x)? - rhs)
    })
}

/// Fields `H_J` with `ζh = Σ_J T_J H_J`, plus diagnostics.
#[derive(Clone, Debug)]
pub struct DecompositionResult {
    pub k: usize,
    pub terms: BTreeMap<TangentTuple, ScalarField>,
    pub residual: f64,
    pub term_norms: BTreeMap<TangentTuple, f64>,
    /// `‖(1 − |x|²)^k h‖`
    pub proxy_norm: f64,
}

impl DecompositionResult {
    /// `‖H_{(1,…,1)}‖ / ‖(1 − |x|²)^k h‖` for the top tuple.
    pub fn top_ratio(&self) -> f64 {
        self.term_norms[&TangentTuple::repeated(1, self.k)] / self.proxy_norm
    }
}

/// Decomposes `ζh` on the disk as `Σ_{ℓ≤k} T^ℓ H_ℓ` with
/// `H_k = (−1)^k 𝔄^{2k}[T^k(ζh)]` and, for `ℓ < k`,
/// `H_ℓ = (−1)^ℓ 𝔄^{2ℓ+2}[T^ℓ(aΔ(ζh))]`.
pub fn prop_decompose(
    h: &ScalarField,
    k: usize,
    zeta: &ScalarField,
    q: &QuadratureRule,
) -> Result<DecompositionResult> {
    prop_decompose_with(h, k, zeta, q, DEFAULT_S_NODES)
}

pub fn prop_decompose_with(
    h: &ScalarField,
    k: usize,
    zeta: &ScalarField,
    q: &QuadratureRule,
    nodes: usize,
) -> Result<DecompositionResult> {
    if h.dim() != 2 || zeta.dim() != 2 || q.dim() != 2 {
        return Err(LabError::Unsupported(
            "the constructive decomposition is implemented on the disk".into(),
        ));
    }
    if !(1..=3).contains(&k) {
        return usage(format!("decomposition order must be in 1..=3, got {k}"));
    }
    let probe: Vec<Point> = (0..48)
        .map(|i| Point::polar(0.1 + 0.8 * (i % 6) as f64 / 5.0, 0.37 + i as f64 * 0.13))
        .collect();
    let scale = probe
        .iter()
        .map(|p| h.eval(p).map(f64::abs))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(1.0, f64::max);
    let res = harmonicity_residual(h, &probe)?;
    if res > 1e-6 * scale {
        return Err(LabError::Precondition(format!(
            "`{}` is not harmonic (max |Δh| = {res:.3e})",
            h.label()
        )));
    }
    require_collar_support(zeta)?;
    let set = spanning_set_for_ball(2)?;
    let g = zeta.times(h)?;
    let a_lap = norm_squared(2).times(&laplacian(&g)?)?;
    let a = |len: usize| AOperator::power(2, len).with_nodes(nodes);
    let sign = |l: usize| if l.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut terms = BTreeMap::new();
    for l in 0..k {
        let tuple = TangentTuple::repeated(1, l);
        let inner = apply_tuple(&a_lap, &tuple, &set)?;
        let hl = apply_a(&a(2 * l + 2), &inner)?.scaled(sign(l));
        terms.insert(tuple, hl.with_label(&format!("H_{l}")));
    }
    let top = TangentTuple::repeated(1, k);
    let inner = apply_tuple(&g, &top, &set)?;
    let hk = apply_a(&a(2 * k), &inner)?.scaled(sign(k));
    terms.insert(top, hk.with_label(&format!("H_{k}")));

    // Residual and term norms in one pass: H_ℓ(x) and T^ℓH_ℓ(x) come from the
    // same jets, with ζh expanded once per s-node.
    let t1 = set.get(1)?.clone();
    let mut ray_terms = Vec::new();
    for l in 0..k {
        let t = t1.clone();
        ray_terms.push(RayTerm {
            length: 2 * l + 2,
            order: l,
            map: Box::new(move |y, j| {
                let base = a_laplacian_jet(y, j).scale(sign(l));
                (0..l).fold(base, |acc, _| t.apply_to_jet(y, &acc))
            }),
        });
    }
    let t = t1.clone();
    ray_terms.push(RayTerm {
        length: 2 * k,
        order: k,
        map: Box::new(move |y, j| (0..k).fold(j.scale(sign(k)), |acc, _| t.apply_to_jet(y, &acc))),
    });
    let rows = q.map_nodes(|x| {
        let jets = shared_ray_jets(&g, 2 * k, &ray_terms, nodes, x)?;
        let mut out = Vec::with_capacity(k + 2);
        let mut acc = g.eval_at(x)?;
        for hj in &jets {
            let th = (0..hj.order()).fold(hj.clone(), |a, _| t1.apply_to_jet(x, &a));
            acc -= th.value();
        }
        out.push(acc);
        out.extend(jets.iter().map(Jet::value));
        Ok(out)
    })?;
    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let res_values = column(0);
    q.check_finite(&res_values)?;
    let residual = q.weighted_sum_sq(&res_values).sqrt();
    let mut term_norms = BTreeMap::new();
    for (c, t) in terms.keys().enumerate() {
        let vals = column(c + 1);
        q.check_finite(&vals)?;
        term_norms.insert(t.clone(), q.weighted_sum_sq(&vals).sqrt());
    }
    let proxy_norm = weighted_norm(h, k, q)?.value;
    Ok(DecompositionResult {
        k,
        terms,
        residual,
        term_norms,
        proxy_norm,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeOutcome {
    Ratio(f64),
    ZeroInput,
}

/// `‖t_x^ℓ A[g]‖ / Σ_{|β|≤ν} ‖t_x^{ℓ+k} D^β g‖` with `t_x = −ln|x|` and `k`
/// the operator's composition length.
pub fn weighted_bound_probe(op: &AOperator, g: &ScalarField, l: usize, q: &QuadratureRule) -> Result<ProbeOutcome> {
    if l > 4 {
        return usage(format!("probe order must be in 0..=4, got {l}"));
    }
    let ag = apply_a(op, g)?;
    let tx = |x: &[f64]| -0.5 * x.iter().map(|v| v * v).sum::<f64>().ln();
    let numerator = q.l2_norm_fn(|x| Ok(tx(x).powi(l as i32) * ag.eval_at(x)?))?;
    let power = (l + op.length) as i32;
    let mut denominator = 0.0;
    for beta in MultiIndex::all_up_to(g.dim(), op.nu) {
        denominator += q.l2_norm_fn(|x| Ok(tx(x).powi(power) * g.derivative(&beta, x)?))?;
    }
    if denominator == 0.0 {
        return Ok(ProbeOutcome::ZeroInput);
    }
    Ok(ProbeOutcome::Ratio(numerator / denominator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{build_bump_cutoff, build_harmonic_monomial, constant, monomial, Part};
    use crate::quadrature::disk_rule;

    #[test]
    fn flow_examples() {
        let x = Point::xy(0.8, 0.0);
        assert_eq!(flow_map_eval(0.0, &x).unwrap(), x);
        let y = flow_map_eval(-1.0, &x).unwrap();
        assert!((y.coords()[0] - 0.8 * E_INV).abs() < 1e-16);
        assert!(flow_map_eval(-1.5, &x).is_err());
        let rk = FlowMap::new(
            VectorFieldSpec::radial(2),
            CollarSpec::default(),
            Integrator::Rk4 { step: DEFAULT_RK4_STEP },
        )
        .unwrap();
        let p = Point::polar(0.9, 1.1);
        let a = rk.eval(-0.5, &p).unwrap();
        let b = flow_map_eval(-0.5, &p).unwrap();
        for (u, v) in a.coords().iter().zip(b.coords()) {
            assert!((u - v).abs() < 1e-10);
        }
        let rot = VectorFieldSpec::rotation(2, 1, 2).unwrap();
        assert!(FlowMap::new(rot, CollarSpec::default(), Integrator::Rk4 { step: 0.01 }).is_err());
    }

    #[test]
    fn hit_time_examples() {
        assert_eq!(boundary_hit_time(&Point::xy(1.0, 0.0)).unwrap(), 0.0);
        assert!((boundary_hit_time(&Point::xy(E_INV, 0.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((boundary_hit_time(&Point::polar(0.5, 0.3)).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            boundary_hit_time(&Point::xy(0.0, 0.0)),
            Err(LabError::Domain(_))
        ));
    }

    #[test]
    fn irwin_hall_is_a_density() {
        for j in 1..=8 {
            let mut total = 0.0;
            let mut mean = 0.0;
            for piece in 0..j {
                let (us, ws) = gauss_legendre_on(16, piece as f64, piece as f64 + 1.0);
                for (u, w) in us.iter().zip(&ws) {
                    total += w * irwin_hall_density(j, *u);
                    mean += w * u * irwin_hall_density(j, *u);
                }
            }
            assert!((total - 1.0).abs() < 1e-13, "j = {j}");
            assert!((mean - j as f64 / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_a_examples() {
        let op = AOperator::power(2, 1);
        let p = Point::polar(0.7, 0.4);
        let one = apply_a(&op, &constant(2, 1.0)).unwrap();
        assert!((one.eval(&p).unwrap() - 1.0).abs() < 1e-15);
        let r = ScalarField::from_jet_fn(2, "|x|", |v| (&v[0] * &v[0] + &v[1] * &v[1]).sqrt());
        let ar = apply_a(&op, &r).unwrap();
        assert!((ar.eval(&p).unwrap() - (1.0 - E_INV) * 0.7).abs() < 1e-15);
        let r2 = apply_a(&op, &norm_squared(2)).unwrap();
        assert!((r2.eval(&p).unwrap() - (1.0 - E_INV * E_INV) / 2.0 * 0.49).abs() < 1e-15);
    }

    #[test]
    fn collapsed_power_matches_nested_integrals() {
        let zeta = build_bump_cutoff(0.5, 0.7).unwrap();
        let g = zeta.times(&build_harmonic_monomial(3, Part::Real)).unwrap();
        for len in [2usize, 3] {
            let op = AOperator::power(2, len).with_nodes(24);
            let collapsed = apply_a(&op, &g).unwrap();
            let nested = apply_a_nested(&op, &g).unwrap();
            for p in [Point::polar(0.95, 0.2), Point::polar(0.8, 2.0), Point::polar(0.6, -1.0)] {
                let (a, b) = (collapsed.eval(&p).unwrap(), nested.eval(&p).unwrap());
                assert!((a - b).abs() < 1e-10, "len {len}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn ftc_examples() {
        let q = disk_rule(40, 48).unwrap();
        let zeta = build_bump_cutoff(0.5, 0.7).unwrap();
        assert!(ftc_residual(&zeta, &q).unwrap() < 1e-8);
        let g = zeta.times(&build_harmonic_monomial(2, Part::Real)).unwrap();
        assert!(ftc_residual(&g, &q).unwrap() < 1e-8);
        let low = build_bump_cutoff(0.3, 0.6).unwrap();
        assert!(matches!(ftc_residual(&low, &q), Err(LabError::Precondition(_))));
        assert!(matches!(
            ftc_residual(&constant(2, 1.0), &q),
            Err(LabError::Precondition(_))
        ));
    }

    #[test]
    fn split_examples() {
        let q = disk_rule(16, 16).unwrap();
        assert!(laplace_split_residual(&monomial(&[1, 0]), 2, &q).unwrap() < 1e-14);
        assert!(laplace_split_residual(&norm_squared(2), 2, &q).unwrap() < 1e-14);
        let q3 = crate::quadrature::ball3_rule(8, 8, 8).unwrap();
        assert!(laplace_split_residual(&monomial(&[1, 1, 0]), 3, &q3).unwrap() < 1e-8);
        // the split with the wrong lower-order term leaves a residual in n = 3
        let g = monomial(&[2, 1, 0]);
        let broken = linear_combination(&[
            (1.0, split_operator(&g).unwrap()),
            (
                1.0,
                spanning_set_for_ball(3)
                    .unwrap()
                    .fields()
                    .iter()
                    .map(|t| apply_vector_field(&apply_vector_field(&g, t).unwrap(), t).unwrap())
                    .reduce(|a, b| a.plus(&b).unwrap())
                    .unwrap(),
            ),
        ])
        .unwrap();
        assert!(q3.l2_norm_fn(|x| broken.eval_at(x)).unwrap() > 1e-2);
    }

    #[test]
    fn pointwise_solve_recovers_split_weight() {
        for p in [Point::xy(0.3, 0.4), Point::xyz(0.1, -0.5, 0.6), Point::polar(0.9, 2.2)] {
            let a = split_weight(&p).unwrap();
            assert!((a - p.norm_sqr()).abs() < 1e-14);
            let rows = transversal_coefficients(&p).unwrap();
            for (k, row) in rows.iter().enumerate() {
                assert!((row[0] - p.coords()[k] / p.norm_sqr()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn lemma_identity_k1() {
        let q = disk_rule(32, 40).unwrap();
        let zeta = build_bump_cutoff(0.5, 0.7).unwrap();
        let g = zeta.times(&build_harmonic_monomial(3, Part::Real)).unwrap();
        assert!(iterated_antiderivative_residual(&g, 1, &q).unwrap() < 1e-7);
        // k = 1 equals 𝔄²[N²g]
        let n = VectorFieldSpec::radial(2);
        let nng = apply_vector_field(&apply_vector_field(&g, &n).unwrap(), &n).unwrap();
        let direct = apply_a(&AOperator::power(2, 2), &nng).unwrap();
        let rhs = iterated_antiderivative(&g, 1, DEFAULT_S_NODES).unwrap();
        for p in [Point::polar(0.9, 0.3), Point::polar(0.6, 1.3)] {
            assert!((direct.eval(&p).unwrap() - rhs.eval(&p).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_small_cases() {
        let q = disk_rule(32, 40).unwrap();
        let zeta = build_bump_cutoff(0.5, 0.7).unwrap();
        let d = prop_decompose(&constant(2, 1.0), 1, &zeta, &q).unwrap();
        assert!(d.residual < 1e-7, "{}", d.residual);
        assert!(d.term_norms[&TangentTuple::repeated(1, 1)] < 1e-14);
        let h5 = build_harmonic_monomial(5, Part::Real);
        let d5 = prop_decompose(&h5, 1, &zeta, &q).unwrap();
        assert!(d5.residual < 1e-6, "{}", d5.residual);
        assert!(matches!(
            prop_decompose(&norm_squared(2), 1, &zeta, &q),
            Err(LabError::Precondition(_))
        ));
        // H vanishes where the backward flow never meets supp ζ
        for hf in d5.terms.values() {
            assert_eq!(hf.eval(&Point::polar(0.45, 0.7)).unwrap(), 0.0);
        }
    }

    #[test]
    fn shared_rays_match_composed_fields() {
        let q = disk_rule(12, 16).unwrap();
        let zeta = build_bump_cutoff(0.5, 0.7).unwrap();
        let h = build_harmonic_monomial(3, Part::Imag);
        let g = zeta.times(&h).unwrap();
        let rhs = iterated_antiderivative(&g, 2, DEFAULT_S_NODES).unwrap();
        let composed = q.l2_norm_fn(|x| Ok(g.eval_at(x)? - rhs.eval_at(x)?)).unwrap();
        let shared = iterated_antiderivative_residual(&g, 2, &q).unwrap();
        assert!((composed - shared).abs() < 1e-12, "{composed} {shared}");

        let d = prop_decompose(&h, 2, &zeta, &q).unwrap();
        let set = spanning_set_for_ball(2).unwrap();
        let recomposed: Vec<ScalarField> = d
            .terms
            .iter()
            .map(|(t, hf)| apply_tuple(hf, t, &set).unwrap())
            .collect();
        let residual = q
            .l2_norm_fn(|x| {
                let mut acc = g.eval_at(x)?;
                for r in &recomposed {
                    acc -= r.eval_at(x)?;
                }
                Ok(acc)
            })
            .unwrap();
        assert!((residual - d.residual).abs() < 1e-12);
        for (t, hf) in &d.terms {
            let norm = q.l2_norm_fn(|x| hf.eval_at(x)).unwrap();
            assert!((norm - d.term_norms[t]).abs() < 1e-12 * (1.0 + norm));
        }
    }

    #[test]
    fn probe_zero_input() {
        let q = disk_rule(16, 16).unwrap();
        let z = constant(2, 0.0).with_support(Support::Annulus { inner: 0.5, outer: 1.0 });
        assert_eq!(
            weighted_bound_probe(&AOperator::power(2, 1), &z, 0, &q).unwrap(),
            ProbeOutcome::ZeroInput
        );
    }
}
