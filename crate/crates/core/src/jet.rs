//! Truncated multivariate Taylor series ("jets").
//!
//! A [`Jet`] of order `K` in `d` variables stores the Taylor coefficients
//! `c_α = D^α f(x₀) / α!` for every multi-index with `|α| ≤ K`. Arithmetic on
//! jets is exact up to truncation, so a field written once over jets yields
//! every partial derivative up to order `K` without finite differences.
//!
//! Coefficients are laid out by total degree, and within a degree in
//! descending lexicographic order. Lower-order jets are therefore prefixes of
//! higher-order ones, which makes truncation a slice.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

pub const MAX_DIM: usize = 3;
pub const MAX_ORDER: usize = 10;

const KEY_BASE: usize = MAX_ORDER + 1;

#[derive(Debug)]
pub(crate) struct Layout {
    dim: usize,
    order: usize,
    exps: Vec<[u8; MAX_DIM]>,
    deg: Vec<u8>,
    lookup: Vec<u32>,
    mul: Vec<(u32, u32, u32)>,
    partials: [Vec<(u32, f64)>; MAX_DIM],
    alpha_factorial: Vec<f64>,
}

fn key(e: &[u8; MAX_DIM]) -> usize {
    e.iter().rev().fold(0, |acc, &v| acc * KEY_BASE + v as usize)
}

fn exponents_of_degree(dim: usize, d: usize, out: &mut Vec<[u8; MAX_DIM]>) {
    fn rec(dim: usize, pos: usize, left: usize, cur: &mut [u8; MAX_DIM], out: &mut Vec<[u8; MAX_DIM]>) {
        if pos == dim - 1 {
            cur[pos] = left as u8;
            out.push(*cur);
            return;
        }
        for v in (0..=left).rev() {
            cur[pos] = v as u8;
            rec(dim, pos + 1, left - v, cur, out);
        }
        cur[pos] = 0;
    }
    let mut cur = [0u8; MAX_DIM];
    rec(dim, 0, d, &mut cur, out);
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, v| acc * v as f64)
}

impl Layout {
    fn build(dim: usize, order: usize) -> Layout {
        let mut exps = Vec::new();
        for d in 0..=order {
            exponents_of_degree(dim, d, &mut exps);
        }
        let deg: Vec<u8> = exps.iter().map(|e| e.iter().sum()).collect();
        let mut lookup = vec![u32::MAX; KEY_BASE.pow(MAX_DIM as u32)];
        for (i, e) in exps.iter().enumerate() {
            lookup[key(e)] = i as u32;
        }
        let mut mul = Vec::new();
        for i in 0..exps.len() {
            for j in 0..exps.len() {
                if (deg[i] + deg[j]) as usize > order {
                    continue;
                }
                let mut s = [0u8; MAX_DIM];
                for v in 0..MAX_DIM {
                    s[v] = exps[i][v] + exps[j][v];
                }
                mul.push((i as u32, j as u32, lookup[key(&s)]));
            }
        }
        // partials[v][dst] = (src, factor): the order-1 prefix maps onto
        // shifted coefficients of this layout.
        let mut partials: [Vec<(u32, f64)>; MAX_DIM] = Default::default();
        if order > 0 {
            let lower = exps.iter().take_while(|e| (e.iter().sum::<u8>() as usize) < order);
            for beta in lower {
                for (v, table) in partials.iter_mut().enumerate().take(dim) {
                    let mut s = *beta;
                    s[v] += 1;
                    table.push((lookup[key(&s)], (beta[v] + 1) as f64));
                }
            }
        }
        let alpha_factorial = exps
            .iter()
            .map(|e| e.iter().map(|&v| factorial(v as usize)).product())
            .collect();
        Layout {
            dim,
            order,
            exps,
            deg,
            lookup,
            mul,
            partials,
            alpha_factorial,
        }
    }

    fn len(&self) -> usize {
        self.exps.len()
    }

    fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        if alpha.len() != self.dim {
            return None;
        }
        let mut e = [0u8; MAX_DIM];
        e[..self.dim].copy_from_slice(alpha);
        if e.iter().map(|&v| v as usize).sum::<usize>() > self.order {
            return None;
        }
        match self.lookup[key(&e)] {
            u32::MAX => None,
            i => Some(i as usize),
        }
    }
}

fn layout(dim: usize, order: usize) -> &'static Layout {
    static LAYOUTS: OnceLock<Vec<Layout>> = OnceLock::new();
    assert!(
        (1..=MAX_DIM).contains(&dim) && order <= MAX_ORDER,
        "jet layout out of range: dim {dim}, order {order}"
    );
    let all = LAYOUTS.get_or_init(|| {
        (1..=MAX_DIM)
            .flat_map(|d| (0..=MAX_ORDER).map(move |k| Layout::build(d, k)))
            .collect()
    });
    &all[(dim - 1) * (MAX_ORDER + 1) + order]
}

/// Truncated Taylor expansion of a scalar function around a point.
#[derive(Clone, Debug)]
pub struct Jet {
    layout: &'static Layout,
    c: Vec<f64>,
}

impl Jet {
    pub fn constant(dim: usize, order: usize, value: f64) -> Jet {
        let layout = layout(dim, order);
        let mut c = vec![0.0; layout.len()];
        c[0] = value;
        Jet { layout, c }
    }

    pub fn zero(dim: usize, order: usize) -> Jet {
        Jet::constant(dim, order, 0.0)
    }

    /// The coordinate function `x_var` expanded around `value`.
    pub fn variable(dim: usize, order: usize, var: usize, value: f64) -> Jet {
        let mut j = Jet::constant(dim, order, value);
        if order > 0 {
            let mut e = [0u8; MAX_DIM];
            e[var] = 1;
            let idx = j.layout.lookup[key(&e)] as usize;
            j.c[idx] = 1.0;
        }
        j
    }

    /// Jet from its Taylor coefficients: `coeff(α) = D^α f(x₀) / α!`.
    pub fn from_taylor(dim: usize, order: usize, coeff: impl Fn(&[u8]) -> f64) -> Jet {
        let layout = layout(dim, order);
        let c = layout.exps.iter().map(|e| coeff(&e[..dim])).collect();
        Jet { layout, c }
    }

    /// Seeds one variable jet per coordinate of `x`.
    pub fn seed(x: &[f64], order: usize) -> Vec<Jet> {
        (0..x.len())
            .map(|v| Jet::variable(x.len(), order, v, x[v]))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.c
    }

    /// `D^α f(x₀)`, or `None` when `|α|` exceeds the jet order.
    pub fn derivative(&self, alpha: &[u8]) -> Option<f64> {
        self.layout
            .index_of(alpha)
            .map(|i| self.c[i] * self.layout.alpha_factorial[i])
    }

    pub fn truncate(&self, order: usize) -> Jet {
        if order >= self.order() {
            return self.clone();
        }
        let layout = layout(self.dim(), order);
        Jet {
            layout,
            c: self.c[..layout.len()].to_vec(),
        }
    }

    /// `∂/∂x_var`; the result has one order less.
    pub fn partial(&self, var: usize) -> Jet {
        assert!(self.order() > 0, "cannot differentiate an order-0 jet");
        let lower = layout(self.dim(), self.order() - 1);
        let c = self.layout.partials[var]
            .iter()
            .map(|&(src, f)| self.c[src as usize] * f)
            .collect();
        Jet { layout: lower, c }
    }

    /// Jet of `x ↦ f(λx)` given the jet of `f` at `λx₀`.
    pub fn scale_argument(&self, lambda: f64) -> Jet {
        let mut powers = vec![1.0; self.order() + 1];
        for d in 1..powers.len() {
            powers[d] = powers[d - 1] * lambda;
        }
        let c = self
            .c
            .iter()
            .zip(&self.layout.deg)
            .map(|(v, &d)| v * powers[d as usize])
            .collect();
        Jet {
            layout: self.layout,
            c,
        }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            layout: self.layout,
            c: self.c.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Jet, s: f64) {
        let n = self.c.len().min(other.c.len());
        if other.c.len() < self.c.len() {
            self.c.truncate(n);
            self.layout = other.layout;
        }
        for (a, b) in self.c.iter_mut().zip(&other.c) {
            *a += s * b;
        }
    }

    fn pair<'a>(a: &'a Jet, b: &'a Jet) -> (&'static Layout, &'a [f64], &'a [f64]) {
        assert_eq!(a.dim(), b.dim(), "jet dimension mismatch");
        let layout = if a.order() <= b.order() { a.layout } else { b.layout };
        let n = layout.len();
        (layout, &a.c[..n], &b.c[..n])
    }

    fn product(a: &Jet, b: &Jet) -> Jet {
        let (layout, x, y) = Jet::pair(a, b);
        let mut c = vec![0.0; layout.len()];
        for &(i, j, k) in &layout.mul {
            c[k as usize] += x[i as usize] * y[j as usize];
        }
        Jet { layout, c }
    }

    /// `g(f)` for a univariate `g` with derivatives `g^{(i)}(f(x₀))` in
    /// `derivs`; only the first `order + 1` entries are used.
    pub fn compose(&self, derivs: &[f64]) -> Jet {
        let k = self.order();
        assert!(derivs.len() > k, "need {} derivatives, got {}", k + 1, derivs.len());
        let mut delta = self.clone();
        delta.c[0] = 0.0;
        let mut acc = Jet::constant(self.dim(), k, derivs[k] / factorial(k));
        for i in (0..k).rev() {
            acc = Jet::product(&acc, &delta);
            acc.c[0] += derivs[i] / factorial(i);
        }
        acc
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.compose(&vec![e; self.order() + 1])
    }

    pub fn ln(&self) -> Jet {
        let a = self.value();
        let mut d = vec![a.ln()];
        for i in 1..=self.order() {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            d.push(sign * factorial(i - 1) / a.powi(i as i32));
        }
        self.compose(&d)
    }

    pub fn powf(&self, p: f64) -> Jet {
        let a = self.value();
        let mut d = Vec::with_capacity(self.order() + 1);
        let mut fall = 1.0;
        for i in 0..=self.order() {
            d.push(fall * a.powf(p - i as f64));
            fall *= p - i as f64;
        }
        self.compose(&d)
    }

    pub fn powi(&self, n: i32) -> Jet {
        let a = self.value();
        let mut d = Vec::with_capacity(self.order() + 1);
        let mut fall = 1.0;
        for i in 0..=self.order() as i32 {
            if fall == 0.0 {
                d.push(0.0);
            } else {
                d.push(fall * a.powi(n - i));
            }
            fall *= (n - i) as f64;
        }
        self.compose(&d)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn recip(&self) -> Jet {
        self.powi(-1)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [s, c, -s, -c];
        let d: Vec<f64> = (0..=self.order()).map(|i| cycle[i % 4]).collect();
        self.compose(&d)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cycle = [c, -s, -c, s];
        let d: Vec<f64> = (0..=self.order()).map(|i| cycle[i % 4]).collect();
        self.compose(&d)
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        let (layout, x, y) = Jet::pair(self, rhs);
        Jet {
            layout,
            c: x.iter().zip(y).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        let (layout, x, y) = Jet::pair(self, rhs);
        Jet {
            layout,
            c: x.iter().zip(y).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        Jet::product(self, rhs)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Add<f64> for &Jet {
    type Output = Jet;
    fn add(self, rhs: f64) -> Jet {
        let mut out = self.clone();
        out.c[0] += rhs;
        out
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                (&self).$m(rhs)
            }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                self.$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

/// A complex-valued jet, kept as a pair of real jets.
#[derive(Clone, Debug)]
pub struct CJet {
    pub re: Jet,
    pub im: Jet,
}

impl CJet {
    pub fn new(re: Jet, im: Jet) -> CJet {
        CJet { re, im }
    }

    /// `z = x₁ + i x₂` from seeded coordinate jets.
    pub fn z(vars: &[Jet]) -> CJet {
        CJet::new(vars[0].clone(), vars[1].clone())
    }

    pub fn mul(&self, o: &CJet) -> CJet {
        CJet::new(
            &self.re * &o.re - &self.im * &o.im,
            &self.re * &o.im + &self.im * &o.re,
        )
    }

    pub fn add(&self, o: &CJet) -> CJet {
        CJet::new(&self.re + &o.re, &self.im + &o.im)
    }

    pub fn scale(&self, s: f64) -> CJet {
        CJet::new(self.re.scale(s), self.im.scale(s))
    }

    pub fn add_constant(&self, re: f64, im: f64) -> CJet {
        CJet::new(&self.re + re, &self.im + im)
    }

    /// `w ↦ w^m` composed with this jet (holomorphic power).
    pub fn powu(&self, m: u32) -> CJet {
        let k = self.re.order();
        let w0 = Complex::new(self.re.value(), self.im.value());
        let dim = self.re.dim();
        let mut delta = self.clone();
        delta.re.c[0] = 0.0;
        delta.im.c[0] = 0.0;
        // coefficients a_i = C(m, i) w0^{m-i}
        let coef = |i: usize| -> Complex {
            if i as u32 > m {
                return Complex::new(0.0, 0.0);
            }
            let binom = (0..i).fold(1.0, |acc, j| acc * (m as f64 - j as f64) / (j as f64 + 1.0));
            w0.powu(m - i as u32).scale(binom)
        };
        let top = coef(k);
        let mut acc = CJet::new(Jet::constant(dim, k, top.re), Jet::constant(dim, k, top.im));
        for i in (0..k).rev() {
            acc = acc.mul(&delta);
            let a = coef(i);
            acc.re.c[0] += a.re;
            acc.im.c[0] += a.im;
        }
        acc
    }
}

/// Minimal complex scalar used for kernel formulas and basis pairings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const fn new(re: f64, im: f64) -> Complex {
        Complex { re, im }
    }

    pub fn conj(self) -> Complex {
        Complex::new(self.re, -self.im)
    }

    pub fn scale(self, s: f64) -> Complex {
        Complex::new(self.re * s, self.im * s)
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn recip(self) -> Complex {
        let d = self.norm_sqr();
        Complex::new(self.re / d, -self.im / d)
    }

    pub fn powu(self, m: u32) -> Complex {
        let mut base = self;
        let mut out = Complex::new(1.0, 0.0);
        let mut e = m;
        while e > 0 {
            if e & 1 == 1 {
                out = out.mul(base);
            }
            base = base.mul(base);
            e >>= 1;
        }
        out
    }
}

impl Add for Complex {
    type Output = Complex;
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for Complex {
    type Output = Complex;
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for Complex {
    type Output = Complex;
    fn mul(self, o: Complex) -> Complex {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_prefix_property() {
        let lo = layout(2, 3);
        let hi = layout(2, 6);
        assert_eq!(&hi.exps[..lo.len()], &lo.exps[..]);
        assert_eq!(hi.len(), 28);
        assert_eq!(layout(3, 2).len(), 10);
    }

    #[test]
    fn polynomial_derivatives_are_exact() {
        // f = x^3 y^2 at (0.7, -1.3)
        let v = Jet::seed(&[0.7, -1.3], 5);
        let f = &(&(&v[0] * &v[0]) * &v[0]) * &(&v[1] * &v[1]);
        let (x, y) = (0.7f64, -1.3f64);
        assert!((f.value() - x.powi(3) * y * y).abs() < 1e-14);
        assert!((f.derivative(&[1, 0]).unwrap() - 3.0 * x * x * y * y).abs() < 1e-13);
        assert!((f.derivative(&[2, 1]).unwrap() - 12.0 * x * y).abs() < 1e-13);
        assert!((f.derivative(&[3, 2]).unwrap() - 12.0).abs() < 1e-13);
        assert_eq!(f.derivative(&[4, 0]).unwrap(), 0.0);
        assert!(f.derivative(&[4, 2]).is_none());
    }

    #[test]
    fn transcendental_rules_match_closed_forms() {
        let v = Jet::seed(&[0.4], 4);
        let e = v[0].exp();
        for k in 0..=4u8 {
            assert!((e.derivative(&[k]).unwrap() - 0.4f64.exp()).abs() < 1e-14);
        }
        let s = v[0].sqrt();
        // d³/dx³ x^{1/2} = 3/8 x^{-5/2}
        assert!((s.derivative(&[3]).unwrap() - 0.375 * 0.4f64.powf(-2.5)).abs() < 1e-11);
        let l = v[0].ln();
        assert!((l.derivative(&[2]).unwrap() + 1.0 / 0.16).abs() < 1e-12);
        let c = v[0].cos();
        assert!((c.derivative(&[3]).unwrap() - 0.4f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn partial_and_scaling() {
        let v = Jet::seed(&[0.3, 0.5], 4);
        let f = (&v[0] * &v[1]).exp();
        let fx = f.partial(0);
        assert_eq!(fx.order(), 3);
        let expect = 0.5 * (0.15f64).exp();
        assert!((fx.value() - expect).abs() < 1e-14);
        // f(λx) with λ = 2 at x₀ = (0.15, 0.25): second x-derivative gets λ²
        let g = f.scale_argument(2.0);
        assert!((g.derivative(&[2, 0]).unwrap() - 4.0 * f.derivative(&[2, 0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn complex_power_matches_direct_product() {
        let v = Jet::seed(&[0.6, -0.2], 3);
        let z = CJet::z(&v);
        let p = z.powu(5);
        let mut q = z.clone();
        for _ in 0..4 {
            q = q.mul(&z);
        }
        for (a, b) in p.re.coefficients().iter().zip(q.re.coefficients()) {
            assert!((a - b).abs() < 1e-13);
        }
        for (a, b) in p.im.coefficients().iter().zip(q.im.coefficients()) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
