//! The unit ball, its defining function, and the radial and rotation fields.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{usage, LabError, Result};
use crate::jet::Jet;

/// A point of ℝⁿ, n ≥ 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Point> {
        if coords.len() < 2 {
            return usage(format!("points need dimension ≥ 2, got {}", coords.len()));
        }
        if let Some(v) = coords.iter().find(|v| !v.is_finite()) {
            return Err(LabError::Domain(format!("non-finite coordinate {v}")));
        }
        Ok(Point(coords))
    }

    pub fn xy(x: f64, y: f64) -> Point {
        Point(vec![x, y])
    }

    pub fn xyz(x: f64, y: f64, z: f64) -> Point {
        Point(vec![x, y, z])
    }

    /// `(r cos θ, r sin θ)`.
    pub fn polar(r: f64, theta: f64) -> Point {
        Point(vec![r * theta.cos(), r * theta.sin()])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Point {
        Point(self.0.iter().map(|v| v * s).collect())
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Point {
        Point(v.to_vec())
    }
}

impl From<[f64; 3]> for Point {
    fn from(v: [f64; 3]) -> Point {
        Point(v.to_vec())
    }
}

/// Volume of the unit ball in ℝⁿ, `π^{n/2} / Γ(n/2 + 1)`.
pub fn ball_volume(n: usize) -> Result<f64> {
    if n < 2 {
        return usage(format!("ball_volume needs n ≥ 2, got {n}"));
    }
    // Γ(n/2 + 1) by the half-integer recurrence, starting from Γ(1) = 1 or Γ(3/2) = √π/2.
    let mut gamma = if n.is_multiple_of(2) { 1.0 } else { PI.sqrt() / 2.0 };
    let mut arg = if n.is_multiple_of(2) { 1.0 } else { 1.5 };
    let target = n as f64 / 2.0 + 1.0;
    while arg < target - 0.25 {
        gamma *= arg;
        arg += 1.0;
    }
    Ok(PI.powf(n as f64 / 2.0) / gamma)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallDomain {
    dimension: usize,
    volume: f64,
}

impl BallDomain {
    pub fn new(dimension: usize) -> Result<BallDomain> {
        Ok(BallDomain {
            dimension,
            volume: ball_volume(dimension)?,
        })
    }

    pub fn disk() -> BallDomain {
        BallDomain {
            dimension: 2,
            volume: PI,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// `r(x) = |x|² − 1`.
    pub fn defining_function(&self, x: &Point) -> Result<f64> {
        if x.dim() != self.dimension {
            return usage(format!(
                "point of dimension {} on a ball of dimension {}",
                x.dim(),
                self.dimension
            ));
        }
        Ok(x.norm_sqr() - 1.0)
    }

    /// Uniform sample on the unit sphere from a normalized Gaussian vector.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        loop {
            let v: Vec<f64> = (0..self.dimension).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return Point(v.into_iter().map(|a| a / norm).collect());
            }
        }
    }

    /// Uniform sample in the ball of radius `radius`.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R, radius: f64) -> Point {
        let dir = self.sample_boundary(rng);
        let u: f64 = rng.random();
        dir.scaled(radius * u.powf(1.0 / self.dimension as f64))
    }
}

type CoefficientFn = dyn Fn(&[Jet]) -> Vec<Jet> + Send + Sync;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Radial,
    /// `x_i ∂_j − x_j ∂_i` with 1-based `i < j`.
    Rotation(usize, usize),
    Generic,
}

/// A first-order differential operator `Σ N_j(x) ∂/∂x_j`.
#[derive(Clone)]
pub struct VectorFieldSpec {
    kind: FieldKind,
    dim: usize,
    generic: Option<Arc<CoefficientFn>>,
    label: Arc<str>,
}

impl fmt::Debug for VectorFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorFieldSpec({})", self.label)
    }
}

impl VectorFieldSpec {
    /// `N = Σ x_j ∂/∂x_j`.
    pub fn radial(dim: usize) -> VectorFieldSpec {
        VectorFieldSpec {
            kind: FieldKind::Radial,
            dim,
            generic: None,
            label: "N".into(),
        }
    }

    pub fn rotation(dim: usize, i: usize, j: usize) -> Result<VectorFieldSpec> {
        if !(1 <= i && i < j && j <= dim) {
            return usage(format!("rotation indices need 1 ≤ i < j ≤ {dim}, got ({i}, {j})"));
        }
        Ok(VectorFieldSpec {
            kind: FieldKind::Rotation(i, j),
            dim,
            generic: None,
            label: format!("T{i}{j}").into(),
        })
    }

    /// A field given by coefficient functions written over jets, so that
    /// derivatives of `V f` stay exact.
    pub fn generic<F>(dim: usize, label: &str, coefficients: F) -> VectorFieldSpec
    where
        F: Fn(&[Jet]) -> Vec<Jet> + Send + Sync + 'static,
    {
        VectorFieldSpec {
            kind: FieldKind::Generic,
            dim,
            generic: Some(Arc::new(coefficients)),
            label: label.into(),
        }
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Coefficient jets `N_1..N_n` at the point the variable jets are seeded at.
    pub fn coefficient_jets(&self, vars: &[Jet]) -> Vec<Jet> {
        let order = vars[0].order();
        match &self.kind {
            FieldKind::Radial => vars.to_vec(),
            FieldKind::Rotation(i, j) => {
                let mut out = vec![Jet::zero(self.dim, order); self.dim];
                out[j - 1] = vars[i - 1].clone();
                out[i - 1] = -&vars[j - 1];
                out
            }
            FieldKind::Generic => (self.generic.as_ref().expect("generic coefficients"))(vars),
        }
    }

    /// Coefficient values `N(x)`.
    pub fn at(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            FieldKind::Radial => x.to_vec(),
            FieldKind::Rotation(i, j) => {
                let mut out = vec![0.0; self.dim];
                out[j - 1] = x[i - 1];
                out[i - 1] = -x[j - 1];
                out
            }
            FieldKind::Generic => self
                .coefficient_jets(&Jet::seed(x, 0))
                .iter()
                .map(Jet::value)
                .collect(),
        }
    }

    /// Applies the field to a jet of order `K + 1`, producing order `K`.
    pub fn apply_to_jet(&self, x: &[f64], f: &Jet) -> Jet {
        let order = f.order() - 1;
        match &self.kind {
            FieldKind::Rotation(i, j) => {
                let vars = Jet::seed(x, order);
                let dj = f.partial(j - 1);
                let di = f.partial(i - 1);
                &vars[i - 1] * &dj - &vars[j - 1] * &di
            }
            _ => {
                let vars = Jet::seed(x, order);
                let coeffs = self.coefficient_jets(&vars);
                let mut acc = Jet::zero(x.len(), order);
                for (v, c) in coeffs.iter().enumerate() {
                    acc = acc + c * &f.partial(v);
                }
                acc
            }
        }
    }
}

/// Rotation fields `T^{i,j}` spanning the boundary tangent space.
#[derive(Clone, Debug)]
pub struct TangentialSpanningSet {
    dim: usize,
    fields: Vec<VectorFieldSpec>,
}

impl TangentialSpanningSet {
    pub fn fields(&self) -> &[VectorFieldSpec] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// 1-based access, matching tuple indices.
    pub fn get(&self, index: usize) -> Result<&VectorFieldSpec> {
        if index == 0 || index > self.fields.len() {
            return usage(format!(
                "tangent index {index} outside 1..={}",
                self.fields.len()
            ));
        }
        Ok(&self.fields[index - 1])
    }

    /// Rank of the field vectors plus the radial vector at `x`.
    pub fn rank_with_radial(&self, x: &Point) -> usize {
        let mut rows: Vec<Vec<f64>> = self.fields.iter().map(|t| t.at(x.coords())).collect();
        rows.push(x.coords().to_vec());
        matrix_rank(rows, 1e-10)
    }
}

pub fn spanning_set_for_ball(n: usize) -> Result<TangentialSpanningSet> {
    if !(2..=3).contains(&n) {
        return usage(format!("spanning sets are provided for n ∈ {{2, 3}}, got {n}"));
    }
    let mut fields = Vec::new();
    for i in 1..=n {
        for j in (i + 1)..=n {
            fields.push(VectorFieldSpec::rotation(n, i, j)?);
        }
    }
    Ok(TangentialSpanningSet { dim: n, fields })
}

fn matrix_rank(mut rows: Vec<Vec<f64>>, tol: f64) -> usize {
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..cols {
        let pivot = (rank..rows.len()).max_by(|&a, &b| rows[a][c].abs().total_cmp(&rows[b][c].abs()));
        let Some(p) = pivot else { break };
        if rows[p][c].abs() <= tol {
            continue;
        }
        rows.swap(rank, p);
        let pivot = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank {
                let f = row[c] / pivot[c];
                for (x, p) in row[c..cols].iter_mut().zip(&pivot[c..cols]) {
                    *x -= f * p;
                }
            }
        }
        rank += 1;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defining_function_examples() {
        let d2 = BallDomain::disk();
        assert_eq!(d2.defining_function(&Point::xy(0.0, 0.0)).unwrap(), -1.0);
        assert_eq!(d2.defining_function(&Point::xy(1.0, 0.0)).unwrap(), 0.0);
        let d3 = BallDomain::new(3).unwrap();
        assert!(d3.defining_function(&Point::xyz(0.6, 0.8, 0.0)).unwrap().abs() < 1e-15);
        assert!(matches!(
            d3.defining_function(&Point::xy(0.1, 0.2)),
            Err(LabError::Usage(_))
        ));
    }

    #[test]
    fn volumes() {
        assert!((ball_volume(2).unwrap() - PI).abs() < 1e-15);
        assert!((ball_volume(3).unwrap() - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((ball_volume(4).unwrap() - PI * PI / 2.0).abs() < 1e-14);
        assert!(ball_volume(1).is_err());
        // V_n = V_{n-2} 2π/n
        for n in 4..=7 {
            let lhs = ball_volume(n).unwrap();
            let rhs = ball_volume(n - 2).unwrap() * 2.0 * PI / n as f64;
            assert!((lhs - rhs).abs() < 1e-13 * rhs);
        }
    }

    #[test]
    fn spanning_sets() {
        let s2 = spanning_set_for_ball(2).unwrap();
        assert_eq!(s2.len(), 1);
        assert_eq!(s2.fields()[0].kind(), &FieldKind::Rotation(1, 2));
        let s3 = spanning_set_for_ball(3).unwrap();
        let kinds: Vec<_> = s3.fields().iter().map(|f| f.kind().clone()).collect();
        assert_eq!(
            kinds,
            vec![
                FieldKind::Rotation(1, 2),
                FieldKind::Rotation(1, 3),
                FieldKind::Rotation(2, 3)
            ]
        );
        assert!(spanning_set_for_ball(4).is_err());
        // T(0,1) = (−1, 0); with the radial (0,1) the determinant is 1.
        let t = s2.fields()[0].at(&[0.0, 1.0]);
        assert_eq!(t, vec![-1.0, 0.0]);
        let det = t[0] * 1.0 - t[1] * 0.0;
        assert_eq!(det.abs(), 1.0);
    }

    #[test]
    fn rotations_annihilate_defining_function_and_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 3] {
            let ball = BallDomain::new(n).unwrap();
            let set = spanning_set_for_ball(n).unwrap();
            for _ in 0..200 {
                let x = ball.sample_interior(&mut rng, 0.99);
                let vars = Jet::seed(x.coords(), 1);
                let r = vars.iter().fold(Jet::constant(n, 1, -1.0), |acc, v| acc + v * v);
                for t in set.fields() {
                    assert!(t.apply_to_jet(x.coords(), &r).value().abs() < 1e-15);
                }
                let b = ball.sample_boundary(&mut rng);
                assert_eq!(set.rank_with_radial(&b), n);
            }
        }
    }

    #[test]
    fn rotation_index_validation() {
        assert!(VectorFieldSpec::rotation(2, 2, 1).is_err());
        assert!(VectorFieldSpec::rotation(3, 1, 4).is_err());
        let s = spanning_set_for_ball(2).unwrap();
        assert!(s.get(0).is_err());
        assert!(s.get(2).is_err());
    }
}
