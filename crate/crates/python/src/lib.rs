//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use structured_kfe::bench::{run_bench, write_rows};
use structured_kfe::filter::{self, Measurement};
use structured_kfe::innovation::{self, StructuredInnovation};
use structured_kfe::scenarios::{parse_run_config, run_scenario as run_kfe_scenario, ScenarioKind};
use structured_kfe::transforms::{transform_moments, VectorFunction};
use structured_kfe::{Error, GaussianDensity, NoiseModel, Transform};

fn to_py(err: Error) -> PyErr {
    if err.is_numerical() {
        PyArithmeticError::new_err(err.to_string())
    } else {
        PyValueError::new_err(err.to_string())
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn rule(name: &str) -> PyResult<Transform> {
    match name {
        "ekf" => Ok(Transform::Ekf),
        "ukf" => Ok(Transform::unscented()),
        "ckf" => Ok(Transform::Cubature),
        other => Err(PyValueError::new_err(format!("unknown rule `{other}` (expected ekf, ukf or ckf)"))),
    }
}

type MomentLists = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// A Python callable taking and returning a list of floats.
struct PyVectorFunction {
    f: Py<PyAny>,
    input_dim: usize,
    output_dim: usize,
}

impl VectorFunction for PyVectorFunction {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn eval(&self, x: &DVector<f64>) -> structured_kfe::Result<DVector<f64>> {
        Python::attach(|py| {
            let out = self
                .f
                .call1(py, (x.iter().copied().collect::<Vec<f64>>(),))
                .and_then(|v| v.extract::<Vec<f64>>(py))
                .map_err(|e| Error::Evaluation(format!("python callable failed: {e}")))?;
            Ok(DVector::from_vec(out))
        })
    }
}

#[pyclass(name = "Gaussian", from_py_object)]
#[derive(Clone)]
struct PyGaussian {
    inner: GaussianDensity,
}

#[pymethods]
impl PyGaussian {
    #[new]
    fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = GaussianDensity::new(DVector::from_vec(mean), matrix(&cov)?).map_err(to_py)?;
        Ok(PyGaussian { inner })
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().iter().copied().collect()
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        rows(self.inner.cov())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("Gaussian(dim={}, mean={:?})", self.inner.dim(), self.mean())
    }
}

/// Mean, covariance and cross covariance of `f(z)` for `z ~ density`.
#[pyfunction]
#[pyo3(signature = (f, output_dim, density, rule_name = "ukf"))]
fn moments(f: Py<PyAny>, output_dim: usize, density: &PyGaussian, rule_name: &str) -> PyResult<MomentLists> {
    let g = PyVectorFunction { f, input_dim: density.inner.dim(), output_dim };
    let t = transform_moments(&g, &density.inner, rule(rule_name)?).map_err(to_py)?;
    Ok((t.mean.iter().copied().collect(), rows(&t.cov), rows(&t.cross)))
}

/// Prediction through `f([x; ε])` with zero-mean noise of covariance `noise_cov`.
#[pyfunction]
#[pyo3(signature = (density, f, noise_cov, rule_name = "ukf"))]
fn predict(density: &PyGaussian, f: Py<PyAny>, noise_cov: Vec<Vec<f64>>, rule_name: &str) -> PyResult<PyGaussian> {
    let noise = NoiseModel::zero_mean(matrix(&noise_cov)?).map_err(to_py)?;
    let n = density.inner.dim();
    let g = PyVectorFunction { f, input_dim: n + noise.dim(), output_dim: n };
    let inner = filter::predict(&density.inner, &g, &noise, rule(rule_name)?).map_err(to_py)?;
    Ok(PyGaussian { inner })
}

/// Update with `y = h([x; ε])`, zero-mean noise of covariance `noise_cov`.
#[pyfunction]
#[pyo3(signature = (density, h, y, noise_cov, rule_name = "ukf"))]
fn update(
    density: &PyGaussian,
    h: Py<PyAny>,
    y: Vec<f64>,
    noise_cov: Vec<Vec<f64>>,
    rule_name: &str,
) -> PyResult<PyGaussian> {
    let noise = NoiseModel::zero_mean(matrix(&noise_cov)?).map_err(to_py)?;
    let g = PyVectorFunction { f: h, input_dim: density.inner.dim() + noise.dim(), output_dim: y.len() };
    let meas = Measurement::new(DVector::from_vec(y), noise);
    let (inner, _) = filter::update(&density.inner, &g, &meas, rule(rule_name)?).map_err(to_py)?;
    Ok(PyGaussian { inner })
}

/// Solve `(diag(ps) + U Pv Uᵀ) X = rhs`; returns `X` and the flop proxy.
#[pyfunction]
fn woodbury_solve(
    ps_diag: Vec<f64>,
    u: Vec<Vec<f64>>,
    pv: Vec<Vec<f64>>,
    rhs: Vec<Vec<f64>>,
) -> PyResult<(Vec<Vec<f64>>, u64)> {
    let s = StructuredInnovation::new(DVector::from_vec(ps_diag), matrix(&u)?, matrix(&pv)?).map_err(to_py)?;
    let (x, flops) = innovation::woodbury_solve(&s, &matrix(&rhs)?).map_err(to_py)?;
    Ok((rows(&x), flops))
}

/// Run a scenario from JSON config text; returns the CSV records and the JSON summary.
#[pyfunction]
fn run_scenario(config_json: &str) -> PyResult<(String, String)> {
    let cfg = parse_run_config(config_json).map_err(to_py)?;
    let run = run_kfe_scenario(&cfg, false).map_err(to_py)?;
    let mut csv = Vec::new();
    run.write_csv(&mut csv).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let summary = serde_json::to_string(&run.summary).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((String::from_utf8_lossy(&csv).into_owned(), summary))
}

/// Run an equivalence suite; returns `(suite, passed, max_rel_error)` per suite.
#[pyfunction]
#[pyo3(signature = (suite, seed = 0))]
fn verify(suite: &str, seed: u64) -> PyResult<Vec<(String, bool, f64)>> {
    let reports = structured_kfe::verify::run_suite(suite, seed).map_err(to_py)?;
    Ok(reports.iter().map(|r| (r.suite.clone(), r.passed(), r.max_rel_error)).collect())
}

/// Work-count table as CSV text.
#[pyfunction(name = "bench")]
#[pyo3(signature = (scenario, sizes, seed = 0))]
fn bench_table(scenario: &str, sizes: Vec<usize>, seed: u64) -> PyResult<String> {
    let kind = ScenarioKind::parse(scenario).map_err(to_py)?;
    let rows = run_bench(kind, &sizes, seed, false).map_err(to_py)?;
    let mut out = Vec::new();
    write_rows(&rows, &mut out).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(String::from_utf8_lossy(&out).into_owned())
}

#[pymodule]
fn structured_kfe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGaussian>()?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(update, m)?)?;
    m.add_function(wrap_pyfunction!(woodbury_solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(bench_table, m)?)?;
    Ok(())
}
