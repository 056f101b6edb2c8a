//! Python bindings. Structured results are returned as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use shapevar::cli_reports::{self, to_json_string, VerifyArgs};
use shapevar::closed_forms::{self, EvaluationMode, OmegaConvention};
use shapevar::regime_classifier::{self, ThresholdGrids};
use shapevar::sphere_harmonics::HarmonicIndex;
use shapevar::variation_engine::{self, CoefficientKind};
use shapevar::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Solver { .. } | Error::NotStarShaped { .. } | Error::NonFinite { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = to_json_string(value);
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn mode_of(name: &str) -> PyResult<EvaluationMode> {
    name.parse().map_err(py_err)
}

#[pyclass(name = "ProblemParams", frozen, from_py_object)]
#[derive(Clone)]
struct PyParams(closed_forms::ProblemParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (d, p, q, radius = 1.0))]
    fn new(d: usize, p: f64, q: f64, radius: f64) -> PyResult<Self> {
        closed_forms::ProblemParams::new(d, p, q, radius).map(Self).map_err(py_err)
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d
    }

    #[getter]
    fn p(&self) -> f64 {
        self.0.p
    }

    #[getter]
    fn q(&self) -> f64 {
        self.0.q
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.0.radius
    }

    fn gamma(&self) -> f64 {
        self.0.gamma()
    }

    fn gamma_tilde(&self) -> f64 {
        self.0.gamma_tilde()
    }

    fn ball_capacity(&self) -> f64 {
        closed_forms::ball_capacity(&self.0)
    }

    #[pyo3(signature = (mode = "derived"))]
    fn ball_torsion(&self, mode: &str) -> PyResult<f64> {
        Ok(closed_forms::ball_torsion(&self.0, mode_of(mode)?))
    }

    fn ball_constants(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &closed_forms::ball_constants(&self.0, OmegaConvention::UnitSphereArea))
    }

    fn __repr__(&self) -> String {
        format!("ProblemParams(d={}, p={}, q={}, radius={})", self.0.d, self.0.p, self.0.q, self.0.radius)
    }
}

/// Shape coefficients `ρ = Σ c_{k,m} Y_{k,m}` on `∂B_R`.
#[pyclass(name = "ModeSpectrum", from_py_object)]
#[derive(Clone)]
struct PySpectrum(variation_engine::ModeSpectrum);

#[pymethods]
impl PySpectrum {
    #[new]
    #[pyo3(signature = (radius = 1.0))]
    fn new(radius: f64) -> Self {
        Self(variation_engine::ModeSpectrum::new(radius, CoefficientKind::Shape))
    }

    /// Builds a spectrum from the `k:coeff[,k:m:coeff…]` notation of the command line.
    #[staticmethod]
    #[pyo3(signature = (text, radius = 1.0))]
    fn parse(text: &str, radius: f64) -> PyResult<Self> {
        cli_reports::parse_modes(text, radius).map(Self).map_err(py_err)
    }

    #[pyo3(signature = (k, coeff, m = 0))]
    fn add(&mut self, k: i64, coeff: f64, m: i64) -> PyResult<()> {
        self.0.add(HarmonicIndex::new(k, m).map_err(py_err)?, coeff);
        Ok(())
    }

    fn entries(&self) -> Vec<(usize, i64, f64)> {
        self.0.entries().iter().map(|(i, c)| (i.k, i.m, *c)).collect()
    }

    fn __len__(&self) -> usize {
        self.0.entries().len()
    }
}

#[pyfunction]
fn second_variation_capacity(py: Python<'_>, params: PyParams, spectrum: PySpectrum) -> PyResult<Py<PyAny>> {
    let r = variation_engine::second_variation_capacity(&params.0, &spectrum.0).map_err(py_err)?;
    to_py(py, &r)
}

#[pyfunction]
fn second_variation_torsion(py: Python<'_>, params: PyParams, spectrum: PySpectrum) -> PyResult<Py<PyAny>> {
    let r = variation_engine::second_variation_torsion(&params.0, &spectrum.0).map_err(py_err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (params, spectrum, mode = "paper"))]
fn second_variation_product(py: Python<'_>, params: PyParams, spectrum: PySpectrum, mode: &str) -> PyResult<Py<PyAny>> {
    let r = variation_engine::second_variation_product(&params.0, &spectrum.0, mode_of(mode)?).map_err(py_err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (params, mode = "paper"))]
fn product_coefficients(py: Python<'_>, params: PyParams, mode: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &variation_engine::product_coefficients(&params.0, mode_of(mode)?))
}

#[pyfunction]
fn capacity_threshold(d: usize) -> f64 {
    regime_classifier::capacity_threshold(d)
}

#[pyfunction]
fn capacity_unstable_modes(params: PyParams) -> Vec<usize> {
    regime_classifier::capacity_unstable_modes(&params.0).into_iter().collect()
}

#[pyfunction]
#[pyo3(signature = (params, mode = "paper", k_max = regime_classifier::DEFAULT_K_MAX))]
fn classify_product(py: Python<'_>, params: PyParams, mode: &str, k_max: usize) -> PyResult<Py<PyAny>> {
    let c = regime_classifier::classify_product(&params.0, mode_of(mode)?, k_max).map_err(py_err)?;
    to_py(py, &c)
}

/// `None` when no product mode is positive on the scanned grids.
#[pyfunction]
#[pyo3(signature = (d, mode = "paper", p_step = 0.01, q_step = 0.01, q_max = 10.0))]
fn find_product_thresholds(
    py: Python<'_>,
    d: usize,
    mode: &str,
    p_step: f64,
    q_step: f64,
    q_max: f64,
) -> PyResult<Py<PyAny>> {
    let grids = ThresholdGrids { p_step, q_step, q_max, ..ThresholdGrids::default() };
    let found = py.detach(|| regime_classifier::find_product_thresholds(d, mode_of(mode)?, &grids).map_err(py_err))?;
    match found {
        Some(t) => to_py(py, &t),
        None => Ok(py.None()),
    }
}

/// Runs one oracle comparison and returns its rows; the oracle solves release the GIL.
#[pyfunction]
#[pyo3(signature = (target, k = 2))]
fn verify(py: Python<'_>, target: &str, k: usize) -> PyResult<Py<PyAny>> {
    let args = VerifyArgs::new(target.parse().map_err(py_err)?, k);
    let rows = py.detach(|| cli_reports::verify_rows(&args)).map_err(py_err)?;
    to_py(py, &rows)
}

#[pymodule(name = "shapevar")]
fn shapevar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PySpectrum>()?;
    m.add_function(wrap_pyfunction!(second_variation_capacity, m)?)?;
    m.add_function(wrap_pyfunction!(second_variation_torsion, m)?)?;
    m.add_function(wrap_pyfunction!(second_variation_product, m)?)?;
    m.add_function(wrap_pyfunction!(product_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(capacity_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(capacity_unstable_modes, m)?)?;
    m.add_function(wrap_pyfunction!(classify_product, m)?)?;
    m.add_function(wrap_pyfunction!(find_product_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
