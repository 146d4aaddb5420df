//! Python bindings: fields, quadrature rules, kernels, norms and the experiment runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyComplex, PyDict, PyList};

use lab::experiments::{self, ExperimentConfig, ExperimentKind};
use lab::fields::{self as core_fields, MultiIndex, Part, ScalarField};
use lab::geometry::{self, spanning_set_for_ball, Point};
use lab::kernels;
use lab::quadrature::{self, QuadratureRule};
use lab::LabError;

fn err(e: LabError) -> PyErr {
    match e {
        LabError::Usage(_) | LabError::Precondition(_) | LabError::Unsupported(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn point(coords: Vec<f64>) -> PyResult<Point> {
    Point::new(coords).map_err(err)
}

fn part(name: &str) -> PyResult<Part> {
    match name {
        "re" | "real" => Ok(Part::Real),
        "im" | "imag" => Ok(Part::Imag),
        _ => Err(PyValueError::new_err(format!("part must be 're' or 'im', got {name:?}"))),
    }
}

/// A scalar field on the closed unit ball.
#[pyclass(name = "Field", module = "bergman_lab", frozen)]
struct Field {
    inner: ScalarField,
}

#[pymethods]
impl Field {
    /// `Re z^m` or `Im z^m` on the disk.
    #[staticmethod]
    #[pyo3(signature = (m, part = "re"))]
    fn harmonic_monomial(m: u32, part: &str) -> PyResult<Field> {
        Ok(Field {
            inner: core_fields::build_harmonic_monomial(m, self::part(part)?),
        })
    }

    /// The counterexample field `f_k`.
    #[staticmethod]
    fn counterexample(k: u32) -> PyResult<Field> {
        core_fields::build_counterexample_fk(k).map(|inner| Field { inner }).map_err(err)
    }

    /// Smooth radial cutoff, 0 for `|x| ≤ rho0` and 1 for `|x| ≥ rho1`.
    #[staticmethod]
    #[pyo3(signature = (rho0, rho1, dim = 2))]
    fn bump_cutoff(rho0: f64, rho1: f64, dim: usize) -> PyResult<Field> {
        core_fields::build_bump_cutoff_in(dim, rho0, rho1)
            .map(|inner| Field { inner })
            .map_err(err)
    }

    /// `x^a y^b` (or `x^a y^b z^c`).
    #[staticmethod]
    fn monomial(exponents: Vec<u32>) -> PyResult<Field> {
        if !(2..=3).contains(&exponents.len()) {
            return Err(PyValueError::new_err("monomials live in two or three variables"));
        }
        Ok(Field {
            inner: core_fields::monomial(&exponents),
        })
    }

    #[staticmethod]
    fn constant(dim: usize, value: f64) -> Field {
        Field {
            inner: core_fields::constant(dim, value),
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label().to_string()
    }

    fn __call__(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&point(x)?).map_err(err)
    }

    /// `∂^alpha f(x)`.
    fn derivative(&self, alpha: Vec<u8>, x: Vec<f64>) -> PyResult<f64> {
        let alpha = MultiIndex::new(alpha).map_err(err)?;
        self.inner.derivative(&alpha, &x).map_err(err)
    }

    fn __add__(&self, other: &Field) -> PyResult<Field> {
        self.inner.plus(&other.inner).map(|inner| Field { inner }).map_err(err)
    }

    fn __sub__(&self, other: &Field) -> PyResult<Field> {
        self.inner.minus(&other.inner).map(|inner| Field { inner }).map_err(err)
    }

    fn __mul__(&self, other: &Field) -> PyResult<Field> {
        self.inner.times(&other.inner).map(|inner| Field { inner }).map_err(err)
    }

    fn scaled(&self, s: f64) -> Field {
        Field {
            inner: self.inner.scaled(s),
        }
    }

    /// Applies the rotation field `x_i ∂_j − x_j ∂_i` (1-based).
    fn rotate(&self, i: usize, j: usize) -> PyResult<Field> {
        let t = geometry::VectorFieldSpec::rotation(self.inner.dim(), i, j).map_err(err)?;
        core_fields::apply_vector_field(&self.inner, &t)
            .map(|inner| Field { inner })
            .map_err(err)
    }

    /// Applies the radial field `x · ∇`.
    fn radial(&self) -> PyResult<Field> {
        let n = geometry::VectorFieldSpec::radial(self.inner.dim());
        core_fields::apply_vector_field(&self.inner, &n)
            .map(|inner| Field { inner })
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Field({:?}, dim={})", self.inner.label(), self.inner.dim())
    }
}

/// A tensor Gauss rule on the unit disk or the unit 3-ball.
#[pyclass(name = "Quadrature", module = "bergman_lab", frozen)]
struct Quadrature {
    inner: QuadratureRule,
}

#[pymethods]
impl Quadrature {
    #[staticmethod]
    #[pyo3(signature = (n_r = 160, n_theta = 256))]
    fn disk(n_r: usize, n_theta: usize) -> PyResult<Quadrature> {
        quadrature::disk_rule(n_r, n_theta)
            .map(|inner| Quadrature { inner })
            .map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (n_r = 32, n_theta = 32, n_phi = 64))]
    fn ball3(n_r: usize, n_theta: usize, n_phi: usize) -> PyResult<Quadrature> {
        quadrature::ball3_rule(n_r, n_theta, n_phi)
            .map(|inner| Quadrature { inner })
            .map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn integrate(&self, py: Python<'_>, f: &Field) -> PyResult<f64> {
        py.detach(|| quadrature::integrate(&f.inner, &self.inner)).map_err(err)
    }

    fn inner_product(&self, py: Python<'_>, f: &Field, g: &Field) -> PyResult<f64> {
        py.detach(|| quadrature::inner_product(&f.inner, &g.inner, &self.inner))
            .map_err(err)
    }
}

#[pyfunction]
fn ball_volume(n: usize) -> PyResult<f64> {
    geometry::ball_volume(n).map_err(err)
}

/// Harmonic Bergman kernel of the unit ball in dimension `n`.
#[pyfunction]
#[pyo3(signature = (x, y, n = None))]
fn harmonic_kernel(x: Vec<f64>, y: Vec<f64>, n: Option<usize>) -> PyResult<f64> {
    let n = n.unwrap_or(x.len());
    kernels::harmonic_kernel(&point(x)?, &point(y)?, n).map_err(err)
}

/// Analytic Bergman kernel of the disk.
#[pyfunction]
fn analytic_kernel_disk<'py>(py: Python<'py>, z: Vec<f64>, w: Vec<f64>) -> PyResult<Bound<'py, PyComplex>> {
    let k = kernels::analytic_kernel_disk(&point(z)?, &point(w)?).map_err(err)?;
    Ok(PyComplex::from_doubles(py, k.re, k.im))
}

#[pyfunction]
fn l2_norm(py: Python<'_>, f: &Field, q: &Quadrature) -> PyResult<f64> {
    py.detach(|| quadrature::l2_norm(&f.inner, &q.inner)).map_err(err)
}

/// Full Sobolev norm `‖f‖_k`.
#[pyfunction]
fn sobolev_norm(py: Python<'_>, f: &Field, k: usize, q: &Quadrature) -> PyResult<f64> {
    py.detach(|| quadrature::sobolev_norm(&f.inner, k, &q.inner))
        .map(|r| r.value)
        .map_err(err)
}

/// Tangential Sobolev norm over the standard rotation fields.
#[pyfunction]
fn tangential_sobolev_norm(py: Python<'_>, f: &Field, k: usize, q: &Quadrature) -> PyResult<f64> {
    let set = spanning_set_for_ball(f.inner.dim()).map_err(err)?;
    py.detach(|| quadrature::tangential_sobolev_norm(&f.inner, k, &set, &q.inner))
        .map(|r| r.value)
        .map_err(err)
}

/// Harmonic projection on the disk as `{label: coefficient}` in the orthonormal basis.
#[pyfunction]
#[pyo3(signature = (f, q, degree = 64))]
fn project_basis<'py>(py: Python<'py>, f: &Field, q: &Quadrature, degree: usize) -> PyResult<Bound<'py, PyDict>> {
    let basis = py
        .detach(|| kernels::project_basis_disk(&f.inner, degree, &q.inner))
        .map_err(err)?;
    let out = PyDict::new(py);
    for (label, c) in basis.entries() {
        out.set_item(label, c)?;
    }
    Ok(out)
}

/// `Pf(x)` by kernel quadrature.
#[pyfunction]
fn project_kernel(py: Python<'_>, f: &Field, x: Vec<f64>, q: &Quadrature) -> PyResult<f64> {
    let x = point(x)?;
    py.detach(|| kernels::project_kernel(&f.inner, &x, &q.inner)).map_err(err)
}

/// Runs one experiment (or `"all"`) and returns the report rows as dicts.
///
/// `config_json` uses the same keys as the CLI config file.
#[pyfunction]
#[pyo3(signature = (name, config_json = None))]
fn run_experiment<'py>(py: Python<'py>, name: &str, config_json: Option<&str>) -> PyResult<Bound<'py, PyList>> {
    let mut config = match config_json {
        Some(text) => ExperimentConfig::from_json(text).map_err(err)?,
        None => ExperimentConfig::default(),
    };
    config.experiment = name.parse::<ExperimentKind>().map_err(err)?;
    let report = py.detach(|| experiments::run(&config)).map_err(err)?;
    let rows = PyList::empty(py);
    for r in &report.rows {
        let d = PyDict::new(py);
        d.set_item("experiment", &r.experiment)?;
        d.set_item("k", r.k)?;
        d.set_item("quantity", &r.quantity)?;
        d.set_item("measured", r.measured)?;
        d.set_item("reference", r.reference)?;
        d.set_item("provenance", r.provenance.tag())?;
        d.set_item("tolerance", r.tolerance.label())?;
        d.set_item("pass", r.verdict.label())?;
        d.set_item("source", &r.source)?;
        rows.append(d)?;
    }
    Ok(rows)
}

#[pymodule]
fn bergman_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Field>()?;
    m.add_class::<Quadrature>()?;
    m.add_function(wrap_pyfunction!(ball_volume, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_kernel_disk, m)?)?;
    m.add_function(wrap_pyfunction!(l2_norm, m)?)?;
    m.add_function(wrap_pyfunction!(sobolev_norm, m)?)?;
    m.add_function(wrap_pyfunction!(tangential_sobolev_norm, m)?)?;
    m.add_function(wrap_pyfunction!(project_basis, m)?)?;
    m.add_function(wrap_pyfunction!(project_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
