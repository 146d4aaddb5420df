//! The harmonic Bergman kernel of the unit ball, the analytic Bergman kernel
//! of the disk, and three independent routes to the projection `P`:
//! kernel quadrature, expansion in an orthonormal harmonic basis, and
//! assembly from the analytic projection as `Bf + conj(Bf) − Bf(0)`.

use std::f64::consts::PI;

use crate::error::{usage, LabError, Result};
use crate::fields::{apply_vector_field, FieldRule, ScalarField};
use crate::geometry::{ball_volume, Point, VectorFieldSpec};
use crate::jet::{Complex, Jet};
use crate::quadrature::{compensated_sum, disk_rule_with_radius, QuadratureRule, Resolution};

pub const DEFAULT_EVAL_RADIUS: f64 = 0.7;
pub const DEFAULT_BASIS_DEGREE: usize = 64;

fn check_interior(p: &[f64], name: &str) -> Result<f64> {
    let s: f64 = p.iter().map(|v| v * v).sum();
    if s >= 1.0 {
        return Err(LabError::Domain(format!(
            "kernel argument {name} has |{name}| = {} ≥ 1",
            s.sqrt()
        )));
    }
    Ok(s)
}

/// Harmonic Bergman kernel of `B^n`, valid for any `n ≥ 2`:
/// `P(x,y) = (n(1−|x|²|y|²)²/D − 4|x|²|y|²) / (n V(B^n) D^{n/2})`,
/// `D = 1 − 2⟨x,y⟩ + |x|²|y|²`.
pub fn harmonic_kernel(x: &Point, y: &Point, n: usize) -> Result<f64> {
    if x.dim() != n || y.dim() != n {
        return usage(format!(
            "kernel of dimension {n} evaluated at points of dimension {} and {}",
            x.dim(),
            y.dim()
        ));
    }
    let v = ball_volume(n)?;
    kernel_raw(x.coords(), y.coords(), n, v)
}

pub(crate) fn kernel_raw(x: &[f64], y: &[f64], n: usize, volume: f64) -> Result<f64> {
    let xx = check_interior(x, "x")?;
    let yy = check_interior(y, "y")?;
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let s = xx * yy;
    let d = 1.0 - 2.0 * xy + s;
    let nf = n as f64;
    let dn2 = if n.is_multiple_of(2) {
        d.powi((n / 2) as i32)
    } else {
        d.powi((n / 2) as i32) * d.sqrt()
    };
    Ok((nf * (1.0 - s) * (1.0 - s) / d - 4.0 * s) / (nf * volume * dn2))
}

/// `(1/π)(1 − z w̄)^{−2}`.
pub fn analytic_kernel_disk(z: &Point, w: &Point) -> Result<Complex> {
    if z.dim() != 2 || w.dim() != 2 {
        return usage("the analytic kernel lives on the disk");
    }
    check_interior(z.coords(), "z")?;
    check_interior(w.coords(), "w")?;
    let zc = Complex::new(z.coords()[0], z.coords()[1]);
    let wc = Complex::new(w.coords()[0], w.coords()[1]);
    let one_minus = Complex::new(1.0, 0.0) - zc * wc.conj();
    Ok((one_minus * one_minus).recip().scale(1.0 / PI))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelResidual {
    pub absolute: f64,
    pub relative: f64,
}

/// Worst deviation between the harmonic kernel and `2 Re K(z,w) − 1/π` over
/// disk pairs; the relative figure divides by `max(1, |P|)`.
pub fn kernel_decomposition_residual(pairs: &[(Point, Point)]) -> Result<KernelResidual> {
    let mut out = KernelResidual {
        absolute: 0.0,
        relative: 0.0,
    };
    for (x, y) in pairs {
        let p = harmonic_kernel(x, y, 2)?;
        let k = analytic_kernel_disk(x, y)?;
        let diff = (p - (2.0 * k.re - 1.0 / PI)).abs();
        out.absolute = out.absolute.max(diff);
        out.relative = out.relative.max(diff / p.abs().max(1.0));
    }
    Ok(out)
}

/// Kernel-quadrature projection with an evaluation cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEval {
    pub dimension: usize,
    pub eval_radius: f64,
}

impl KernelEval {
    pub fn new(dimension: usize, eval_radius: f64) -> Result<KernelEval> {
        if dimension < 2 {
            return usage("kernel dimension must be ≥ 2");
        }
        if !(eval_radius > 0.0 && eval_radius < 1.0) {
            return usage(format!("evaluation radius must lie in (0, 1), got {eval_radius}"));
        }
        Ok(KernelEval {
            dimension,
            eval_radius,
        })
    }

    /// `(Pf)(x) = ∫ P(x,y) f(y) dV(y)` at each point.
    pub fn project_at(&self, f: &ScalarField, xs: &[Point], q: &QuadratureRule) -> Result<Vec<f64>> {
        if q.dim() != self.dimension || f.dim() != self.dimension {
            return usage("kernel, field and rule dimensions differ");
        }
        for x in xs {
            if x.dim() != self.dimension {
                return usage("evaluation point has the wrong dimension");
            }
            let norm = x.norm();
            if norm > self.eval_radius {
                return Err(LabError::BeyondEvalRadius {
                    norm,
                    cap: self.eval_radius,
                });
            }
        }
        let fv = q.sample(|y| f.eval_at(y))?;
        let vol = ball_volume(self.dimension)?;
        let n = self.dimension;
        xs.iter()
            .map(|x| {
                let kv = q.sample(|y| kernel_raw(x.coords(), y, n, vol))?;
                Ok(compensated_sum(
                    kv.iter()
                        .zip(&fv)
                        .zip(q.weights())
                        .map(|((k, v), w)| k * v * w),
                ))
            })
            .collect()
    }
}

/// Kernel-quadrature projection at one point with the default cap.
pub fn project_kernel(f: &ScalarField, x: &Point, q: &QuadratureRule) -> Result<f64> {
    let eval = KernelEval::new(q.dim(), DEFAULT_EVAL_RADIUS)?;
    Ok(eval.project_at(f, std::slice::from_ref(x), q)?[0])
}

/// Normalization of `Re z^m`, `Im z^m` in the orthonormal harmonic basis.
pub fn basis_normalization(m: usize) -> f64 {
    if m == 0 {
        1.0 / PI.sqrt()
    } else {
        (2.0 * (m as f64 + 1.0) / PI).sqrt()
    }
}

/// `Re Σ a_m z^m` on the disk.
struct RealPartRule {
    a: Vec<Complex>,
}

impl FieldRule for RealPartRule {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let z = Complex::new(x[0], x[1]);
        Ok(self
            .a
            .iter()
            .rev()
            .fold(Complex::new(0.0, 0.0), |acc, c| acc * z + *c)
            .re)
    }

    /// With `F(z+h) = Σ c_d h^d` and `h = dx + i dy`, the Taylor coefficient of
    /// `dx^{d−j} dy^j` in `Re F` is `Re(c_d C(d,j) i^j)`.
    fn jet(&self, x: &[f64], order: usize) -> Result<Jet> {
        let z = Complex::new(x[0], x[1]);
        // repeated synthetic division gives the shifted coefficients c_0, …, c_order
        let mut work = self.a.clone();
        let mut shifted = Vec::with_capacity(order + 1);
        while shifted.len() <= order && !work.is_empty() {
            let mut acc = Complex::new(0.0, 0.0);
            for c in work.iter_mut().rev() {
                acc = acc * z + *c;
                *c = acc;
            }
            // work[0] is the remainder, work[1..] the quotient
            shifted.push(work.remove(0));
        }
        Ok(Jet::from_taylor(2, order, |alpha| {
            let (i, j) = (alpha[0] as usize, alpha[1] as usize);
            let d = i + j;
            let Some(c) = shifted.get(d) else {
                return 0.0;
            };
            let rot = match j % 4 {
                0 => *c,
                1 => Complex::new(-c.im, c.re),
                2 => Complex::new(-c.re, -c.im),
                _ => Complex::new(c.im, -c.re),
            };
            binomial(d, j) * rot.re
        }))
    }

    fn exact(&self) -> bool {
        true
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coefficients against `{1/√π, √(2(m+1)/π) Re z^m, √(2(m+1)/π) Im z^m : 1 ≤ m ≤ M}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisExpansion {
    pub degree: usize,
    pub constant: f64,
    /// index `m − 1` holds the `(m, real)` coefficient
    pub real: Vec<f64>,
    /// index `m − 1` holds the `(m, imag)` coefficient
    pub imag: Vec<f64>,
}

impl BasisExpansion {
    pub fn zero(degree: usize) -> BasisExpansion {
        BasisExpansion {
            degree,
            constant: 0.0,
            real: vec![0.0; degree],
            imag: vec![0.0; degree],
        }
    }

    /// Labels `const`, `(m,real)`, `(m,imag)` with their coefficients.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = vec![("const".to_string(), self.constant)];
        for m in 1..=self.degree {
            out.push((format!("({m},real)"), self.real[m - 1]));
            out.push((format!("({m},imag)"), self.imag[m - 1]));
        }
        out
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.entries()
            .into_iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| v)
    }

    /// `a_m` such that the reconstruction equals `Re Σ a_m z^m`.
    pub fn analytic_coefficients(&self) -> Vec<Complex> {
        let mut a = vec![Complex::new(self.constant * basis_normalization(0), 0.0)];
        for m in 1..=self.degree {
            let nm = basis_normalization(m);
            a.push(Complex::new(nm * self.real[m - 1], -nm * self.imag[m - 1]));
        }
        a
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let a = self.analytic_coefficients();
        let z = Complex::new(x[0], x[1]);
        let mut acc = Complex::new(0.0, 0.0);
        for c in a.iter().rev() {
            acc = acc * z + *c;
        }
        acc.re
    }

    /// The reconstruction as a field with exact derivatives.
    pub fn to_field(&self) -> ScalarField {
        ScalarField::from_rule(
            2,
            "basis reconstruction",
            RealPartRule {
                a: self.analytic_coefficients(),
            },
        )
    }

    /// `‖Σ c_e e‖` by Parseval.
    pub fn norm(&self) -> f64 {
        compensated_sum(self.entries().into_iter().map(|(_, v)| v * v)).sqrt()
    }

    /// `(Σ_{e ∉ keep} c_e²)^{1/2}`.
    pub fn off_mode_mass(&self, keep: &[&str]) -> f64 {
        compensated_sum(
            self.entries()
                .into_iter()
                .filter(|(l, _)| !keep.contains(&l.as_str()))
                .map(|(_, v)| v * v),
        )
        .sqrt()
    }

    pub fn max_abs_difference(&self, other: &BasisExpansion) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries())
            .map(|((_, a), (_, b))| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn require_disk(q: &QuadratureRule) -> Result<()> {
    match q.resolution() {
        Resolution::Disk { radius, .. } if *radius == 1.0 => Ok(()),
        _ => usage("basis projections need a rule on the full unit disk"),
    }
}

/// Pairings `∫ u(w) w̄^m dV` for `m = 0..=M`, `u = re + i·im`, summed in node order.
pub fn monomial_pairings(
    re: &ScalarField,
    im: Option<&ScalarField>,
    degree: usize,
    q: &QuadratureRule,
) -> Result<Vec<Complex>> {
    require_disk(q)?;
    let rows: Vec<Vec<f64>> = q.map_nodes(|x| {
        let u = Complex::new(
            re.eval_at(x)?,
            match im {
                Some(g) => g.eval_at(x)?,
                None => 0.0,
            },
        );
        let wbar = Complex::new(x[0], -x[1]);
        let mut p = Complex::new(1.0, 0.0);
        let mut row = Vec::with_capacity(2 * degree + 2);
        for _ in 0..=degree {
            let t = u * p;
            row.push(t.re);
            row.push(t.im);
            p = p * wbar;
        }
        Ok(row)
    })?;
    let mut out = Vec::with_capacity(degree + 1);
    for m in 0..=degree {
        let column = |c: usize| -> Result<f64> {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            q.check_finite(&col)?;
            Ok(q.weighted_sum(&col))
        };
        out.push(Complex::new(column(2 * m)?, column(2 * m + 1)?));
    }
    Ok(out)
}

/// Orthogonal projection onto harmonic polynomials of degree ≤ M.
pub fn project_basis_disk(f: &ScalarField, degree: usize, q: &QuadratureRule) -> Result<BasisExpansion> {
    if degree < 1 {
        return usage("basis degree must be ≥ 1");
    }
    if f.dim() != 2 {
        return usage("basis projection is available on the disk only");
    }
    let pair = monomial_pairings(f, None, degree, q)?;
    let mut out = BasisExpansion::zero(degree);
    out.constant = pair[0].re * basis_normalization(0);
    // ∫ f Re w^m = Re ∫ f w̄^m, ∫ f Im w^m = −Im ∫ f w̄^m
    for (m, p) in pair.iter().enumerate().skip(1).take(degree) {
        let nm = basis_normalization(m);
        out.real[m - 1] = nm * p.re;
        out.imag[m - 1] = -nm * p.im;
    }
    Ok(out)
}

/// Taylor coefficients `b_m = ((m+1)/π) ∫ u w̄^m` of the analytic projection
/// `Bu = Σ b_m z^m` of `u = re + i·im`.
pub fn analytic_projection(
    re: &ScalarField,
    im: Option<&ScalarField>,
    degree: usize,
    q: &QuadratureRule,
) -> Result<Vec<Complex>> {
    let pair = monomial_pairings(re, im, degree, q)?;
    Ok(pair
        .into_iter()
        .enumerate()
        .map(|(m, p)| p.scale((m as f64 + 1.0) / PI))
        .collect())
}

/// `Pf = Bf + conj(Bf) − Bf(0)` for real `f`, expressed in the harmonic basis.
pub fn project_via_analytic(f: &ScalarField, degree: usize, q: &QuadratureRule) -> Result<BasisExpansion> {
    if degree < 1 {
        return usage("basis degree must be ≥ 1");
    }
    if f.dim() != 2 {
        return usage("the analytic route is available on the disk only");
    }
    let b = analytic_projection(f, None, degree, q)?;
    let mut out = BasisExpansion::zero(degree);
    // 2 Re(b_0) − b_0 with b_0 real for real f
    out.constant = b[0].re / basis_normalization(0);
    for (m, bm) in b.iter().enumerate().skip(1).take(degree) {
        let nm = basis_normalization(m);
        out.real[m - 1] = 2.0 * bm.re / nm;
        out.imag[m - 1] = -2.0 * bm.im / nm;
    }
    Ok(out)
}

/// `‖T(Pf) − P(Tf)‖` over `|x| ≤ 0.9`, both projections by the basis route.
pub fn commutator_residual(
    f: &ScalarField,
    t: &VectorFieldSpec,
    degree: usize,
    q: &QuadratureRule,
) -> Result<f64> {
    let pf = project_basis_disk(f, degree, q)?.to_field();
    let tpf = apply_vector_field(&pf, t)?;
    let tf = apply_vector_field(f, t)?;
    let ptf = project_basis_disk(&tf, degree, q)?.to_field();
    let (n_r, n_theta) = match q.resolution() {
        Resolution::Disk { n_r, n_theta, .. } => (*n_r, *n_theta),
        Resolution::Ball { .. } => unreachable!("checked by project_basis_disk"),
    };
    let inner = disk_rule_with_radius(n_r, n_theta, 0.9)?;
    inner.l2_norm_fn(|x| Ok(tpf.eval_at(x)? - ptf.eval_at(x)?))
}
