//! Scalar fields on the closed ball and the differential operators acting on them.
//!
//! Built-in families carry an exact derivative rule: the field is written
//! over [`Jet`]s, so any `D^α` up to [`MAX_ORDER`] is exact to rounding.
//! Fields without such a rule (plain closures) fall back to fourth-order
//! central differences with relative step `1e-3·max(1, |x|)`.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use crate::error::{usage, LabError, Result};
use crate::geometry::{Point, TangentialSpanningSet, VectorFieldSpec};
use crate::jet::{CJet, Jet, MAX_ORDER};

/// Default cap on `|α|` for user-facing multi-indices.
pub const DEFAULT_MAX_DERIVATIVE_ORDER: usize = 4;

/// Highest derivative order served by finite differences.
pub const FD_MAX_ORDER: usize = 4;

const FD_RELATIVE_STEP: f64 = 1e-3;

/// Radius around a flagged non-smooth point inside which Cartesian finite
/// differences are refused for the counterexample family.
pub const COUNTEREXAMPLE_EXCLUSION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Support {
    Whole,
    /// Vanishes for `|x| ≤ inner`.
    Annulus { inner: f64, outer: f64 },
}

impl Support {
    pub fn inner_radius(&self) -> f64 {
        match self {
            Support::Whole => 0.0,
            Support::Annulus { inner, .. } => *inner,
        }
    }

    fn intersect(self, other: Support) -> Support {
        match (self, other) {
            (Support::Whole, s) | (s, Support::Whole) => s,
            (Support::Annulus { inner: a, outer: b }, Support::Annulus { inner: c, outer: d }) => {
                Support::Annulus {
                    inner: a.max(c),
                    outer: b.min(d),
                }
            }
        }
    }

    fn union(self, other: Support) -> Support {
        match (self, other) {
            (Support::Whole, _) | (_, Support::Whole) => Support::Whole,
            (Support::Annulus { inner: a, outer: b }, Support::Annulus { inner: c, outer: d }) => {
                Support::Annulus {
                    inner: a.min(c),
                    outer: b.max(d),
                }
            }
        }
    }
}

/// Evaluation strategy behind a [`ScalarField`].
pub trait FieldRule: Send + Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;

    /// Taylor jet at `x`; `Err(NoExactRule)` when the field has no exact rule.
    fn jet(&self, x: &[f64], order: usize) -> Result<Jet>;

    fn exact(&self) -> bool;
}

#[derive(Clone)]
pub struct ScalarField {
    rule: Arc<dyn FieldRule>,
    dim: usize,
    support: Support,
    singular_radius: Option<f64>,
    breaks: Arc<[f64]>,
    label: Arc<str>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("support", &self.support)
            .field("exact", &self.rule.exact())
            .finish()
    }
}

struct JetExpr<F>(F);

impl<F> FieldRule for JetExpr<F>
where
    F: Fn(&[Jet]) -> Result<Jet> + Send + Sync,
{
    fn value(&self, x: &[f64]) -> Result<f64> {
        (self.0)(&Jet::seed(x, 0)).map(|j| j.value())
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        if order > MAX_ORDER {
            return usage(format!("jet order {order} exceeds {MAX_ORDER}"));
        }
        (self.0)(&Jet::seed(x, order))
    }

    fn exact(&self) -> bool {
        true
    }
}

struct ValueFn<F>(F, Arc<str>);

impl<F> FieldRule for ValueFn<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((self.0)(x))
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        if order == 0 {
            return Ok(Jet::constant(x.len(), 0, (self.0)(x)));
        }
        Err(LabError::NoExactRule(self.1.to_string()))
    }

    fn exact(&self) -> bool {
        false
    }
}

impl ScalarField {
    /// A field written over jets; derivatives of every order are exact.
    pub fn from_jet_fn<F>(dim: usize, label: &str, f: F) -> ScalarField
    where
        F: Fn(&[Jet]) -> Jet + Send + Sync + 'static,
    {
        Self::from_rule(dim, label, JetExpr(move |v: &[Jet]| Ok(f(v))))
    }

    /// Fallible variant of [`ScalarField::from_jet_fn`].
    pub fn from_fallible_jet_fn<F>(dim: usize, label: &str, f: F) -> ScalarField
    where
        F: Fn(&[Jet]) -> Result<Jet> + Send + Sync + 'static,
    {
        Self::from_rule(dim, label, JetExpr(f))
    }

    /// A field known only through its values; derivatives use finite differences.
    pub fn from_value_fn<F>(dim: usize, label: &str, f: F) -> ScalarField
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let label: Arc<str> = label.into();
        Self::from_rule(dim, &label.clone(), ValueFn(f, label))
    }

    pub fn from_rule<R: FieldRule + 'static>(dim: usize, label: &str, rule: R) -> ScalarField {
        ScalarField {
            rule: Arc::new(rule),
            dim,
            support: Support::Whole,
            singular_radius: None,
            breaks: Arc::from([]),
            label: label.into(),
        }
    }

    pub fn with_support(mut self, support: Support) -> ScalarField {
        self.support = support;
        self
    }

    /// Flags the origin as non-smooth; finite differences are refused within `radius`.
    pub fn with_singular_origin(mut self, radius: f64) -> ScalarField {
        self.singular_radius = Some(radius);
        self
    }

    /// Radii where the field is smooth but not analytic in `|x|`
    /// (cutoff transitions). Integrators along rays split there.
    pub fn with_radial_breaks(mut self, radii: &[f64]) -> ScalarField {
        self.breaks = merge_breaks(&self.breaks, radii);
        self
    }

    pub fn radial_breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn with_label(mut self, label: &str) -> ScalarField {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn singular_radius(&self) -> Option<f64> {
        self.singular_radius
    }

    pub fn has_exact_rule(&self) -> bool {
        self.rule.exact()
    }

    pub fn eval(&self, x: &Point) -> Result<f64> {
        self.check_dim(x.coords())?;
        self.rule.value(x.coords())
    }

    pub fn eval_at(&self, x: &[f64]) -> Result<f64> {
        self.rule.value(x)
    }

    pub fn jet_at(&self, x: &[f64], order: usize) -> Result<Jet> {
        self.rule.jet(x, order)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return usage(format!(
                "point of dimension {} for field `{}` of dimension {}",
                x.len(),
                self.label,
                self.dim
            ));
        }
        Ok(())
    }

    /// `D^α f(x)`: exact rule when present, finite differences otherwise.
    pub fn derivative(&self, alpha: &MultiIndex, x: &[f64]) -> Result<f64> {
        if alpha.dim() != self.dim {
            return usage(format!(
                "multi-index of dimension {} for field of dimension {}",
                alpha.dim(),
                self.dim
            ));
        }
        self.derivative_raw(alpha.entries(), x)
    }

    pub(crate) fn derivative_raw(&self, alpha: &[u8], x: &[f64]) -> Result<f64> {
        let order: usize = alpha.iter().map(|&a| a as usize).sum();
        if order == 0 {
            return self.rule.value(x);
        }
        if self.rule.exact() {
            let j = self.rule.jet(x, order)?;
            return j
                .derivative(alpha)
                .ok_or_else(|| LabError::Usage("derivative order exceeds jet".into()));
        }
        finite_difference(self, alpha, x)
    }

    /// Highest derivative order this field can serve.
    pub fn max_derivative_order(&self) -> usize {
        if self.rule.exact() {
            MAX_ORDER
        } else {
            FD_MAX_ORDER
        }
    }

    pub fn scaled(&self, s: f64) -> ScalarField {
        linear_combination(&[(s, self.clone())]).expect("single term")
    }

    pub fn plus(&self, other: &ScalarField) -> Result<ScalarField> {
        linear_combination(&[(1.0, self.clone()), (1.0, other.clone())])
    }

    pub fn minus(&self, other: &ScalarField) -> Result<ScalarField> {
        linear_combination(&[(1.0, self.clone()), (-1.0, other.clone())])
    }

    pub fn times(&self, other: &ScalarField) -> Result<ScalarField> {
        if self.dim != other.dim {
            return usage("product of fields of different dimensions");
        }
        let label = format!("({})·({})", self.label, other.label);
        let support = self.support.intersect(other.support);
        let singular = merge_singular(self.singular_radius, other.singular_radius);
        let mut f = ScalarField::from_rule(
            self.dim,
            &label,
            Product {
                a: self.clone(),
                b: other.clone(),
            },
        )
        .with_support(support);
        f.singular_radius = singular;
        f.breaks = merge_breaks(&self.breaks, &other.breaks);
        Ok(f)
    }
}

fn merge_breaks(a: &[f64], b: &[f64]) -> Arc<[f64]> {
    let mut v: Vec<f64> = a.iter().chain(b).copied().collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.into()
}

fn merge_singular(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(0.0).max(b.unwrap_or(0.0))),
    }
}

/// `Σ c_i f_i`.
pub fn linear_combination(terms: &[(f64, ScalarField)]) -> Result<ScalarField> {
    let Some((_, first)) = terms.first() else {
        return usage("empty linear combination");
    };
    if terms.iter().any(|(_, f)| f.dim != first.dim) {
        return usage("linear combination of fields of different dimensions");
    }
    let label = terms
        .iter()
        .map(|(c, f)| format!("{c}·{}", f.label))
        .collect::<Vec<_>>()
        .join(" + ");
    let support = terms
        .iter()
        .skip(1)
        .fold(first.support, |s, (_, f)| s.union(f.support));
    let singular = terms
        .iter()
        .fold(None, |s, (_, f)| merge_singular(s, f.singular_radius));
    let mut f = ScalarField::from_rule(
        first.dim,
        &label,
        Linear {
            terms: terms.to_vec(),
        },
    )
    .with_support(support);
    f.singular_radius = singular;
    f.breaks = terms
        .iter()
        .fold(Arc::from([]), |acc: Arc<[f64]>, (_, g)| merge_breaks(&acc, &g.breaks));
    Ok(f)
}

struct Linear {
    terms: Vec<(f64, ScalarField)>,
}

impl FieldRule for Linear {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (c, f) in &self.terms {
            acc += c * f.rule.value(x)?;
        }
        Ok(acc)
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        let mut acc = Jet::zero(x.len(), order);
        for (c, f) in &self.terms {
            acc.add_scaled(&f.rule.jet(x, order)?, *c);
        }
        Ok(acc)
    }

    fn exact(&self) -> bool {
        self.terms.iter().all(|(_, f)| f.rule.exact())
    }
}

struct Product {
    a: ScalarField,
    b: ScalarField,
}

impl FieldRule for Product {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.a.rule.value(x)? * self.b.rule.value(x)?)
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        Ok(self.a.rule.jet(x, order)? * self.b.rule.jet(x, order)?)
    }

    fn exact(&self) -> bool {
        self.a.rule.exact() && self.b.rule.exact()
    }
}

/// A multi-index `α ∈ ℕ₀ⁿ`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    entries: Vec<u8>,
}

impl MultiIndex {
    pub fn new(entries: Vec<u8>) -> Result<MultiIndex> {
        Self::with_max_order(entries, DEFAULT_MAX_DERIVATIVE_ORDER)
    }

    pub fn with_max_order(entries: Vec<u8>, max_order: usize) -> Result<MultiIndex> {
        let order: usize = entries.iter().map(|&a| a as usize).sum();
        if order > max_order {
            return usage(format!("|α| = {order} exceeds maximum order {max_order}"));
        }
        if entries.is_empty() {
            return usage("empty multi-index");
        }
        Ok(MultiIndex { entries })
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn order(&self) -> usize {
        self.entries.iter().map(|&a| a as usize).sum()
    }

    /// Every multi-index with `|α| ≤ k`, by degree then descending lexicographic order.
    pub fn all_up_to(dim: usize, k: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for d in 0..=k {
            let mut level = Vec::new();
            fn rec(dim: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
                if cur.len() == dim - 1 {
                    cur.push(left as u8);
                    out.push(cur.clone());
                    cur.pop();
                    return;
                }
                for v in (0..=left).rev() {
                    cur.push(v as u8);
                    rec(dim, left - v, cur, out);
                    cur.pop();
                }
            }
            rec(dim, d, &mut Vec::new(), &mut level);
            out.extend(level.into_iter().map(|entries| MultiIndex { entries }));
        }
        out
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.entries.iter().map(u8::to_string).collect();
        format!("D^({})", parts.join(","))
    }
}

/// An ordered tuple `J = (j_1, …, j_ℓ)` of 1-based spanning-set indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TangentTuple {
    indices: Vec<usize>,
}

impl TangentTuple {
    pub fn new(indices: Vec<usize>) -> TangentTuple {
        TangentTuple { indices }
    }

    pub fn identity() -> TangentTuple {
        TangentTuple { indices: vec![] }
    }

    /// `(1, 1, …, 1)` of length `len`.
    pub fn repeated(index: usize, len: usize) -> TangentTuple {
        TangentTuple {
            indices: vec![index; len],
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// All `m^ℓ` ordered tuples of length `ℓ`, lexicographic.
    pub fn all_of_length(m: usize, len: usize) -> Vec<TangentTuple> {
        let mut out = vec![TangentTuple::identity()];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|t| {
                    (1..=m).map(move |j| {
                        let mut v = t.indices.clone();
                        v.push(j);
                        TangentTuple { indices: v }
                    })
                })
                .collect();
        }
        out
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.indices.iter().map(usize::to_string).collect();
        format!("T({})", parts.join(","))
    }
}

impl Ord for TangentTuple {
    fn cmp(&self, other: &Self) -> Ordering {
        self.indices
            .len()
            .cmp(&other.indices.len())
            .then_with(|| self.indices.cmp(&other.indices))
    }
}

impl PartialOrd for TangentTuple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for TangentTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Real,
    Imag,
}

/// `Re z^m` or `Im z^m` on the disk. `Im z^0` is the zero field.
pub fn build_harmonic_monomial(m: u32, part: Part) -> ScalarField {
    let label = match part {
        Part::Real => format!("Re z^{m}"),
        Part::Imag => format!("Im z^{m}"),
    };
    ScalarField::from_jet_fn(2, &label, move |v| {
        let p = CJet::z(v).powu(m);
        match part {
            Part::Real => p.re,
            Part::Imag => p.im,
        }
    })
}

fn polar_mode_jet(v: &[Jet], power: u32) -> Result<CJet> {
    let r2 = &v[0] * &v[0] + &v[1] * &v[1];
    if r2.value() == 0.0 {
        return Err(LabError::Domain("polar form is singular at the origin".into()));
    }
    let inv_r = r2.powf(-0.5);
    let u = CJet::new(&v[0] * &inv_r, &v[1] * &inv_r);
    Ok(u.powu(power))
}

fn counterexample_part(k: u32, part: Part) -> ScalarField {
    let label = match part {
        Part::Real => format!("f_{k}"),
        Part::Imag => format!("Im g_{k}"),
    };
    let rule = CounterexampleRule { k, part };
    ScalarField::from_rule(2, &label, rule).with_singular_origin(COUNTEREXAMPLE_EXCLUSION)
}

struct CounterexampleRule {
    k: u32,
    part: Part,
}

impl FieldRule for CounterexampleRule {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let r2 = x[0] * x[0] + x[1] * x[1];
        if r2 == 0.0 {
            return Ok(0.0);
        }
        Ok(self.jet(x, 0)?.value())
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        let v = Jet::seed(x, order);
        let r = (&v[0] * &v[0] + &v[1] * &v[1]).sqrt();
        let mode = polar_mode_jet(&v, self.k + 1)?;
        Ok(match self.part {
            Part::Real => &r * &mode.re,
            Part::Imag => &r * &mode.im,
        })
    }

    fn exact(&self) -> bool {
        true
    }
}

/// `f_k = Re((x₁ + i x₂)^{k+1} / |x|^k)`, i.e. `r cos((k+1)θ)`; `f_k(0) = 0`.
pub fn build_counterexample_fk(k: u32) -> Result<ScalarField> {
    if k < 1 {
        return usage("counterexample order k must be ≥ 1");
    }
    Ok(counterexample_part(k, Part::Real))
}

/// `Im g_k = r sin((k+1)θ)`, the companion of `f_k`.
pub fn build_counterexample_companion(k: u32) -> Result<ScalarField> {
    if k < 1 {
        return usage("counterexample order k must be ≥ 1");
    }
    Ok(counterexample_part(k, Part::Imag))
}

/// `r^p · cos(mθ)` or `r^p · sin(mθ)` away from the origin (smooth where the
/// support keeps it away from 0). Used for bump-modulated trigonometric modes.
pub fn build_polar_mode(m: u32, part: Part) -> ScalarField {
    let label = match part {
        Part::Real => format!("cos({m}θ)"),
        Part::Imag => format!("sin({m}θ)"),
    };
    ScalarField::from_fallible_jet_fn(2, &label, move |v| {
        let u = polar_mode_jet(v, m)?;
        Ok(match part {
            Part::Real => u.re,
            Part::Imag => u.im,
        })
    })
    .with_singular_origin(COUNTEREXAMPLE_EXCLUSION)
}

/// Smooth transition `ψ(t) = E(t)/(E(t)+E(1−t))`, `E(t) = exp(−1/t)`.
pub fn transition_profile(t: f64) -> f64 {
    let e = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
    let (a, b) = (e(t), e(1.0 - t));
    a / (a + b)
}

fn transition_jet(t: &Jet) -> Jet {
    let (dim, order) = (t.dim(), t.order());
    let t0 = t.value();
    if t0 <= 0.0 {
        return Jet::zero(dim, order);
    }
    if t0 >= 1.0 {
        return Jet::constant(dim, order, 1.0);
    }
    let ea = (-t.recip()).exp();
    let one_minus = &(-t) + 1.0;
    let eb = (-one_minus.recip()).exp();
    &ea * &(&ea + &eb).recip()
}

/// Radial cutoff `ζ`: 0 for `|x| ≤ ρ₀`, 1 for `|x| ≥ ρ₁`.
pub fn build_bump_cutoff(rho0: f64, rho1: f64) -> Result<ScalarField> {
    build_bump_cutoff_in(2, rho0, rho1)
}

pub fn build_bump_cutoff_in(dim: usize, rho0: f64, rho1: f64) -> Result<ScalarField> {
    if !(0.0 < rho0 && rho0 < rho1 && rho1 < 1.0) {
        return usage(format!("bump radii need 0 < ρ0 < ρ1 < 1, got ({rho0}, {rho1})"));
    }
    let width = rho1 - rho0;
    Ok(ScalarField::from_jet_fn(dim, &format!("ζ[{rho0},{rho1}]"), move |v| {
        let (d, order) = (v.len(), v[0].order());
        let r2 = v.iter().fold(Jet::zero(d, order), |acc, x| acc + x * x);
        let r0 = r2.value().sqrt();
        if r0 <= rho0 {
            return Jet::zero(d, order);
        }
        if r0 >= rho1 {
            return Jet::constant(d, order, 1.0);
        }
        // ψ((√s − ρ0)/w) as a one-variable series in s = |x|², then composed
        let s = Jet::variable(1, order, 0, r2.value());
        let t = &(&s.sqrt() + (-rho0)) * (1.0 / width);
        let profile = transition_jet(&t);
        let derivs: Vec<f64> = (0..=order)
            .map(|i| profile.derivative(&[i as u8]).expect("within order"))
            .collect();
        r2.compose(&derivs)
    })
    .with_support(Support::Annulus {
        inner: rho0,
        outer: 1.0,
    })
    .with_radial_breaks(&[rho0, rho1]))
}

/// `x^α`.
pub fn monomial(exponents: &[u32]) -> ScalarField {
    let e = exponents.to_vec();
    let label = format!(
        "x^({})",
        e.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
    );
    ScalarField::from_jet_fn(e.len(), &label, move |v| {
        let (d, order) = (v.len(), v[0].order());
        v.iter()
            .zip(&e)
            .fold(Jet::constant(d, order, 1.0), |acc, (x, &p)| {
                if p == 0 {
                    acc
                } else {
                    acc * x.powi(p as i32)
                }
            })
    })
}

/// `|x|²`.
pub fn norm_squared(dim: usize) -> ScalarField {
    ScalarField::from_jet_fn(dim, "|x|^2", |v| {
        v.iter()
            .fold(Jet::zero(v.len(), v[0].order()), |acc, x| acc + x * x)
    })
}

pub fn constant(dim: usize, c: f64) -> ScalarField {
    ScalarField::from_jet_fn(dim, &format!("{c}"), move |v| {
        Jet::constant(v.len(), v[0].order(), c)
    })
}

// ---------------------------------------------------------------------------
// finite differences

fn fd_step(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    FD_RELATIVE_STEP * norm.max(1.0)
}

// 4th-order central stencils: (offsets, weights) scaled by 1/h^order.
const FIRST: ([i32; 4], [f64; 4]) = ([-2, -1, 1, 2], [1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0]);
const SECOND: ([i32; 5], [f64; 5]) = (
    [-2, -1, 0, 1, 2],
    [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0],
);

fn axis_stencil(order: u8) -> Vec<(i32, f64)> {
    match order {
        0 => vec![(0, 1.0)],
        1 => FIRST.0.iter().copied().zip(FIRST.1.iter().copied()).collect(),
        2 => SECOND.0.iter().copied().zip(SECOND.1.iter().copied()).collect(),
        _ => {
            // iterated first differences
            let first = axis_stencil(1);
            let mut acc = vec![(0, 1.0)];
            for _ in 0..order {
                let mut next: Vec<(i32, f64)> = Vec::new();
                for &(o1, w1) in &acc {
                    for &(o2, w2) in &first {
                        match next.iter_mut().find(|(o, _)| *o == o1 + o2) {
                            Some(e) => e.1 += w1 * w2,
                            None => next.push((o1 + o2, w1 * w2)),
                        }
                    }
                }
                acc = next;
            }
            acc
        }
    }
}

fn finite_difference(f: &ScalarField, alpha: &[u8], x: &[f64]) -> Result<f64> {
    let order: usize = alpha.iter().map(|&a| a as usize).sum();
    if order > FD_MAX_ORDER {
        return usage(format!(
            "finite differences serve |α| ≤ {FD_MAX_ORDER}, requested {order}"
        ));
    }
    let h = fd_step(x);
    if let Some(radius) = f.singular_radius {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let reach = 2.0 * h * order as f64;
        if norm <= radius.max(2.0 * h) + reach {
            return Err(LabError::Domain(format!(
                "finite differences of `{}` requested at |x| = {norm:.3e}, within the exclusion radius of its non-smooth point",
                f.label
            )));
        }
    }
    let stencils: Vec<Vec<(i32, f64)>> = alpha.iter().map(|&a| axis_stencil(a)).collect();
    let mut point = x.to_vec();
    let mut acc = 0.0;
    fd_recurse(f, &stencils, 0, h, x, &mut point, 1.0, &mut acc)?;
    Ok(acc / h.powi(order as i32))
}

#[allow(clippy::too_many_arguments)]
fn fd_recurse(
    f: &ScalarField,
    stencils: &[Vec<(i32, f64)>],
    axis: usize,
    h: f64,
    base: &[f64],
    point: &mut Vec<f64>,
    weight: f64,
    acc: &mut f64,
) -> Result<()> {
    if axis == stencils.len() {
        *acc += weight * f.rule.value(point)?;
        return Ok(());
    }
    for &(o, w) in &stencils[axis] {
        point[axis] = base[axis] + o as f64 * h;
        fd_recurse(f, stencils, axis + 1, h, base, point, weight * w, acc)?;
    }
    point[axis] = base[axis];
    Ok(())
}

// ---------------------------------------------------------------------------
// derived fields

struct Partial {
    inner: ScalarField,
    alpha: Vec<u8>,
}

impl FieldRule for Partial {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.inner.derivative_raw(&self.alpha, x)
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        let total: usize = self.alpha.iter().map(|&a| a as usize).sum();
        let mut j = self.inner.rule.jet(x, order + total)?;
        for (v, &a) in self.alpha.iter().enumerate() {
            for _ in 0..a {
                j = j.partial(v);
            }
        }
        Ok(j)
    }

    fn exact(&self) -> bool {
        self.inner.rule.exact()
    }
}

struct VectorApplied {
    inner: ScalarField,
    field: VectorFieldSpec,
}

impl FieldRule for VectorApplied {
    fn value(&self, x: &[f64]) -> Result<f64> {
        if self.inner.rule.exact() {
            let j = self.inner.rule.jet(x, 1)?;
            return Ok(self.field.apply_to_jet(x, &j).value());
        }
        let coeffs = self.field.at(x);
        let mut acc = 0.0;
        let mut alpha = vec![0u8; x.len()];
        for (v, c) in coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            alpha[v] = 1;
            acc += c * finite_difference(&self.inner, &alpha, x)?;
            alpha[v] = 0;
        }
        Ok(acc)
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        let j = self.inner.rule.jet(x, order + 1)?;
        Ok(self.field.apply_to_jet(x, &j))
    }

    fn exact(&self) -> bool {
        self.inner.rule.exact()
    }
}

struct LaplacianRule {
    inner: ScalarField,
}

impl FieldRule for LaplacianRule {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let mut alpha = vec![0u8; x.len()];
        if self.inner.rule.exact() {
            let j = self.inner.rule.jet(x, 2)?;
            let mut acc = 0.0;
            for v in 0..x.len() {
                alpha[v] = 2;
                acc += j.derivative(&alpha).expect("order 2");
                alpha[v] = 0;
            }
            return Ok(acc);
        }
        let mut acc = 0.0;
        for v in 0..x.len() {
            alpha[v] = 2;
            acc += finite_difference(&self.inner, &alpha, x)?;
            alpha[v] = 0;
        }
        Ok(acc)
    }

    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        let j = self.inner.rule.jet(x, order + 2)?;
        let mut acc = Jet::zero(x.len(), order);
        for v in 0..x.len() {
            acc = acc + j.partial(v).partial(v);
        }
        Ok(acc)
    }

    fn exact(&self) -> bool {
        self.inner.rule.exact()
    }
}

fn derived(inner: &ScalarField, label: String, rule: impl FieldRule + 'static) -> ScalarField {
    let mut f = ScalarField::from_rule(inner.dim, &label, rule).with_support(inner.support);
    f.singular_radius = inner.singular_radius;
    f.breaks = inner.breaks.clone();
    f
}

pub fn apply_partial(f: &ScalarField, alpha: &MultiIndex) -> Result<ScalarField> {
    if alpha.dim() != f.dim {
        return usage(format!(
            "multi-index of dimension {} for field of dimension {}",
            alpha.dim(),
            f.dim
        ));
    }
    if alpha.order() > f.max_derivative_order() {
        return usage(format!(
            "|α| = {} exceeds what `{}` can serve",
            alpha.order(),
            f.label
        ));
    }
    Ok(derived(
        f,
        format!("{}[{}]", alpha.label(), f.label),
        Partial {
            inner: f.clone(),
            alpha: alpha.entries().to_vec(),
        },
    ))
}

pub fn apply_vector_field(f: &ScalarField, field: &VectorFieldSpec) -> Result<ScalarField> {
    if field.dim() != f.dim {
        return usage(format!(
            "vector field of dimension {} for field of dimension {}",
            field.dim(),
            f.dim
        ));
    }
    Ok(derived(
        f,
        format!("{}[{}]", field.label(), f.label),
        VectorApplied {
            inner: f.clone(),
            field: field.clone(),
        },
    ))
}

/// `T_J f = T_{j_1}(T_{j_2}(⋯ T_{j_ℓ} f))`; the empty tuple returns `f`.
pub fn apply_tuple(
    f: &ScalarField,
    tuple: &TangentTuple,
    set: &TangentialSpanningSet,
) -> Result<ScalarField> {
    let mut out = f.clone();
    for &j in tuple.indices().iter().rev() {
        out = apply_vector_field(&out, set.get(j)?)?;
    }
    Ok(out)
}

pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    if f.max_derivative_order() < 2 {
        return usage(format!("`{}` cannot serve second derivatives", f.label));
    }
    Ok(derived(
        f,
        format!("Δ[{}]", f.label),
        LaplacianRule { inner: f.clone() },
    ))
}

/// `max |Δf|` over the sample.
pub fn harmonicity_residual(f: &ScalarField, sample: &[Point]) -> Result<f64> {
    if sample.is_empty() {
        return usage("harmonicity residual needs a non-empty sample");
    }
    let lap = laplacian(f)?;
    let mut worst: f64 = 0.0;
    for p in sample {
        worst = worst.max(lap.eval(p)?.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{spanning_set_for_ball, BallDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn mi(e: &[u8]) -> MultiIndex {
        MultiIndex::new(e.to_vec()).unwrap()
    }

    fn sample(n: usize, seed: u64, min_r: f64, max_r: f64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let r = rng.random_range(min_r..max_r);
                let t = rng.random_range(0.0..2.0 * PI);
                Point::polar(r, t)
            })
            .collect()
    }

    #[test]
    fn harmonic_monomial_examples() {
        let f = build_harmonic_monomial(1, Part::Real);
        assert_eq!(f.eval(&Point::xy(0.3, -0.4)).unwrap(), 0.3);
        let f2 = build_harmonic_monomial(2, Part::Real);
        let p = Point::xy(0.3, -0.4);
        assert!((f2.eval(&p).unwrap() - (0.09 - 0.16)).abs() < 1e-15);
        assert!(harmonicity_residual(&f2, &sample(20, 1, 0.0, 0.99)).unwrap() < 1e-12);
        let zero = build_harmonic_monomial(0, Part::Imag);
        assert_eq!(zero.eval(&p).unwrap(), 0.0);
    }

    #[test]
    fn counterexample_polar_values() {
        let f1 = build_counterexample_fk(1).unwrap();
        assert!((f1.eval(&Point::polar(0.5, 0.0)).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(f1.eval(&Point::xy(0.0, 0.0)).unwrap(), 0.0);
        let f3 = build_counterexample_fk(3).unwrap();
        let p = Point::polar(0.7, 0.3);
        assert!((f3.eval(&p).unwrap() - 0.7 * (4.0f64 * 0.3).cos()).abs() < 1e-14);
        assert!(build_counterexample_fk(0).is_err());
        // N f_k = f_k away from the origin
        let n = crate::geometry::VectorFieldSpec::radial(2);
        let nf = apply_vector_field(&f3, &n).unwrap();
        for q in sample(50, 2, 0.1, 0.99) {
            assert!((nf.eval(&q).unwrap() - f3.eval(&q).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn bump_cutoff_examples() {
        let z = build_bump_cutoff(0.5, 0.7).unwrap();
        assert_eq!(z.eval(&Point::polar(0.4, 1.0)).unwrap(), 0.0);
        assert_eq!(z.eval(&Point::polar(0.9, 1.0)).unwrap(), 1.0);
        assert!((z.eval(&Point::polar(0.6, 2.0)).unwrap() - 0.5).abs() < 1e-14);
        assert!(build_bump_cutoff(0.7, 0.5).is_err());
        assert!((transition_profile(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn partial_derivative_examples() {
        let xy = monomial(&[1, 1]);
        let d = apply_partial(&xy, &mi(&[1, 0])).unwrap();
        assert!((d.eval(&Point::xy(0.2, 0.7)).unwrap() - 0.7).abs() < 1e-15);
        let re2 = build_harmonic_monomial(2, Part::Real);
        let d2 = apply_partial(&re2, &mi(&[2, 0])).unwrap();
        assert!((d2.eval(&Point::xy(0.2, 0.7)).unwrap() - 2.0).abs() < 1e-14);
        let n2 = norm_squared(2);
        let d11 = apply_partial(&n2, &mi(&[1, 1])).unwrap();
        assert_eq!(d11.eval(&Point::xy(0.2, 0.7)).unwrap(), 0.0);
        assert!(MultiIndex::new(vec![3, 2]).is_err());
    }

    #[test]
    fn vector_field_examples() {
        let set = spanning_set_for_ball(2).unwrap();
        let t = set.get(1).unwrap();
        let x1 = monomial(&[1, 0]);
        let tx1 = apply_vector_field(&x1, t).unwrap();
        assert_eq!(tx1.eval(&Point::xy(0.3, 0.6)).unwrap(), -0.6);
        let n = VectorFieldSpec::radial(2);
        let r2 = norm_squared(2);
        let nr2 = apply_vector_field(&r2, &n).unwrap();
        let p = Point::xy(0.3, 0.6);
        assert!((nr2.eval(&p).unwrap() - 2.0 * p.norm_sqr()).abs() < 1e-15);
        assert!(apply_vector_field(&r2, t).unwrap().eval(&p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn tuple_examples() {
        let set = spanning_set_for_ball(2).unwrap();
        let re2 = build_harmonic_monomial(2, Part::Real);
        let id = apply_tuple(&re2, &TangentTuple::identity(), &set).unwrap();
        let p = Point::xy(0.31, -0.52);
        assert_eq!(id.eval(&p).unwrap(), re2.eval(&p).unwrap());
        let tt = apply_tuple(&re2, &TangentTuple::new(vec![1, 1]), &set).unwrap();
        assert!((tt.eval(&p).unwrap() + 4.0 * re2.eval(&p).unwrap()).abs() < 1e-14);
        assert!(apply_tuple(&re2, &TangentTuple::new(vec![2]), &set).is_err());
        // T f_k = −(k+1)·(sine companion), checked against finite differences
        let k = 4;
        let fk = build_counterexample_fk(k).unwrap();
        let gk = build_counterexample_companion(k).unwrap();
        let tf = apply_tuple(&fk, &TangentTuple::new(vec![1]), &set).unwrap();
        let fd_copy = ScalarField::from_value_fn(2, "f_k values", move |x| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            r * ((k as f64 + 1.0) * x[1].atan2(x[0])).cos()
        })
        .with_singular_origin(COUNTEREXAMPLE_EXCLUSION);
        let tf_fd = apply_tuple(&fd_copy, &TangentTuple::new(vec![1]), &set).unwrap();
        for q in sample(40, 3, 0.2, 0.95) {
            let exact = tf.eval(&q).unwrap();
            assert!((exact + (k as f64 + 1.0) * gk.eval(&q).unwrap()).abs() < 1e-12);
            assert!((exact - tf_fd.eval(&q).unwrap()).abs() < 1e-7);
        }
    }

    #[test]
    fn finite_differences_refused_near_singular_origin() {
        let fd = ScalarField::from_value_fn(2, "kink", |x| (x[0] * x[0] + x[1] * x[1]).sqrt())
            .with_singular_origin(COUNTEREXAMPLE_EXCLUSION);
        let d = apply_partial(&fd, &mi(&[1, 0])).unwrap();
        assert!(matches!(d.eval(&Point::xy(0.01, 0.0)), Err(LabError::Domain(_))));
        assert!(d.eval(&Point::xy(0.5, 0.0)).is_ok());
    }

    #[test]
    fn laplacian_examples() {
        let n2 = norm_squared(2);
        let lap = laplacian(&n2).unwrap();
        assert!((lap.eval(&Point::xy(0.1, 0.2)).unwrap() - 4.0).abs() < 1e-14);
        let n3 = norm_squared(3);
        assert!((laplacian(&n3).unwrap().eval(&Point::xyz(0.1, 0.2, 0.3)).unwrap() - 6.0).abs() < 1e-14);
        assert!((harmonicity_residual(&n2, &[Point::xy(0.5, 0.1)]).unwrap() - 4.0).abs() < 1e-14);
        assert!(harmonicity_residual(&n2, &[]).is_err());
        let re3 = build_harmonic_monomial(3, Part::Real);
        assert!(harmonicity_residual(&re3, &sample(100, 4, 0.0, 0.99)).unwrap() < 1e-8);
    }

    #[test]
    fn product_rule_for_cutoff_times_harmonic() {
        // Δ(ζh) = (Δζ)h + 2⟨∇ζ,∇h⟩; the version without the factor 2 fails.
        let z = build_bump_cutoff(0.5, 0.7).unwrap();
        let h = build_harmonic_monomial(3, Part::Real);
        let zh = z.times(&h).unwrap();
        let lap = laplacian(&zh).unwrap();
        let lap_z = laplacian(&z).unwrap();
        let mut worst_with_two: f64 = 0.0;
        let mut worst_without: f64 = 0.0;
        for p in sample(100, 5, 0.52, 0.68) {
            let x = p.coords();
            let gz = [
                z.derivative(&mi(&[1, 0]), x).unwrap(),
                z.derivative(&mi(&[0, 1]), x).unwrap(),
            ];
            let gh = [
                h.derivative(&mi(&[1, 0]), x).unwrap(),
                h.derivative(&mi(&[0, 1]), x).unwrap(),
            ];
            let dot = gz[0] * gh[0] + gz[1] * gh[1];
            let base = lap_z.eval(&p).unwrap() * h.eval(&p).unwrap();
            let direct = lap.eval(&p).unwrap();
            worst_with_two = worst_with_two.max((direct - base - 2.0 * dot).abs());
            worst_without = worst_without.max((direct - base - dot).abs());
        }
        assert!(worst_with_two < 1e-10, "{worst_with_two}");
        assert!(worst_without > 1e-2, "{worst_without}");
    }

    #[test]
    fn exact_rules_agree_with_finite_differences() {
        let families: Vec<ScalarField> = vec![
            build_harmonic_monomial(3, Part::Real),
            build_harmonic_monomial(5, Part::Imag),
            build_counterexample_fk(2).unwrap(),
            build_bump_cutoff(0.5, 0.7).unwrap(),
            monomial(&[2, 3]),
            norm_squared(2),
        ];
        let pts = sample(100, 6, 0.15, 0.95);
        for f in families {
            let g = f.clone();
            let plain = ScalarField::from_value_fn(2, "values", move |x| g.eval_at(x).unwrap());
            for alpha in MultiIndex::all_up_to(2, 2).into_iter().skip(1) {
                for p in &pts {
                    // the cutoff's exp(-1/t) edges defeat a 1e-3 stencil; see the radial test below
                    let r = p.norm();
                    if f.label().starts_with('ζ') && ((r - 0.5).abs() < 0.04 || (r - 0.7).abs() < 0.04) {
                        continue;
                    }
                    let exact = f.derivative(&alpha, p.coords()).unwrap();
                    let fd = plain.derivative(&alpha, p.coords()).unwrap();
                    assert!(
                        (exact - fd).abs() < 1e-6 * exact.abs().max(1.0),
                        "{} {:?} at {:?}: {exact} vs {fd}",
                        f.label(),
                        alpha,
                        p
                    );
                }
            }
        }
    }

    #[test]
    fn cutoff_gradient_matches_radial_profile() {
        let z = build_bump_cutoff(0.5, 0.7).unwrap();
        let h = 1e-6;
        for p in sample(200, 9, 0.5, 0.7) {
            let r = p.norm();
            let t = (r - 0.5) / 0.2;
            let dpsi = (transition_profile(t + h) - transition_profile(t - h)) / (2.0 * h);
            let expect = dpsi / 0.2 * p.coords()[0] / r;
            let got = z.derivative(&mi(&[1, 0]), p.coords()).unwrap();
            assert!((got - expect).abs() < 1e-6 * expect.abs().max(1.0), "{got} vs {expect}");
        }
    }

    #[test]
    fn rotation_preserves_harmonicity() {
        let set = spanning_set_for_ball(2).unwrap();
        let t = set.get(1).unwrap();
        let pts = sample(50, 8, 0.0, 0.95);
        for m in 1..8 {
            for part in [Part::Real, Part::Imag] {
                let h = build_harmonic_monomial(m, part);
                let th = apply_vector_field(&h, t).unwrap();
                assert!(harmonicity_residual(&th, &pts).unwrap() < 1e-8);
            }
        }
    }

    #[test]
    fn tuple_enumeration() {
        assert_eq!(TangentTuple::all_of_length(3, 2).len(), 9);
        assert_eq!(TangentTuple::all_of_length(1, 0), vec![TangentTuple::identity()]);
        assert_eq!(MultiIndex::all_up_to(2, 2).len(), 6);
        assert_eq!(MultiIndex::all_up_to(3, 2).len(), 10);
        let _ = BallDomain::disk();
    }
}
