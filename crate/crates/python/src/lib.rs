//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyOverflowError, PyValueError};
use pyo3::prelude::*;

use rte_lowrank::experiments::{cmd_compare, cmd_run, cmd_singvals, cmd_sweep_dt, cmd_sweep_eps, RunConfig};
use rte_lowrank::{
    gauss_legendre, integrate, Initial, LowRankState, RteError, RteModel, Scheme, StepConfig, SubstepSolver,
};

fn to_py(err: RteError) -> PyErr {
    let msg = err.to_string();
    match err.exit_code() {
        3 => PyArithmeticError::new_err(msg),
        4 => PyOverflowError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

/// Rows to a matrix; every row must have the same length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    let m = rows.first().map(|r| r.len()).unwrap_or(0);
    if n == 0 || m == 0 {
        return Err("matrix must be non-empty".into());
    }
    if let Some(i) = rows.iter().position(|r| r.len() != m) {
        return Err(format!("row {i} has {} entries, expected {m}", rows[i].len()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn rows_arg(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    matrix_from_rows(&rows).map_err(PyValueError::new_err)
}

pub fn parse_scheme(name: &str) -> Result<Scheme, String> {
    match name {
        "gap" => Ok(Scheme::Gap),
        "psi" => Ok(Scheme::Psi),
        "bug" => Ok(Scheme::Bug),
        "reference" => Ok(Scheme::Reference),
        other => Err(format!("unknown scheme `{other}` (gap, psi, bug, reference)")),
    }
}

fn step_config(dt: f64, solver: &str, seed: Option<u64>) -> PyResult<StepConfig> {
    let mut cfg = StepConfig::new(dt);
    cfg.substep_solver = match solver {
        "exponential" => SubstepSolver::Exponential,
        "implicit_euler" => SubstepSolver::ImplicitEuler,
        other => return Err(PyValueError::new_err(format!("unknown substep solver `{other}`"))),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Discrete scaled transport model on a periodic grid.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: RteModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (n_x, n_mu, eps, a = 0.0, b = 2.0))]
    fn new(n_x: usize, n_mu: usize, eps: f64, a: f64, b: f64) -> PyResult<Self> {
        Ok(PyModel { inner: RteModel::build(a, b, n_x, n_mu, eps).map_err(to_py)? })
    }

    #[getter]
    fn n_x(&self) -> usize {
        self.inner.n_x()
    }

    #[getter]
    fn n_mu(&self) -> usize {
        self.inner.n_mu()
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }

    #[getter]
    fn points(&self) -> Vec<f64> {
        self.inner.grid.points.clone()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.inner.quad.nodes.clone()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.quad.weights.clone()
    }

    fn full_rhs(&self, f: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&self.inner.full_rhs(&rows_arg(f)?).map_err(to_py)?))
    }

    fn density(&self, f: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.inner.density(&rows_arg(f)?).map_err(to_py)?.iter().copied().collect())
    }

    fn diffusion_limit_density(&self, rho0: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        let rho0 = nalgebra::DVector::from_vec(rho0);
        Ok(self.inner.diffusion_limit_density(&rho0, t).map_err(to_py)?.iter().copied().collect())
    }

    fn mass(&self, f: Vec<Vec<f64>>) -> PyResult<f64> {
        Ok(self.inner.mass(&rows_arg(f)?))
    }

    fn weighted_norm(&self, f: Vec<Vec<f64>>) -> PyResult<f64> {
        Ok(self.inner.weighted_norm(&rows_arg(f)?))
    }

    /// `(a_x, b_mu, c_mu)` for orthonormal bases.
    fn substep_matrices(
        &self,
        x: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let s = self.inner.assemble_substeps(&rows_arg(x)?, &rows_arg(v)?).map_err(to_py)?;
        Ok((matrix_to_rows(&s.a_x), matrix_to_rows(&s.b_mu), matrix_to_rows(&s.c_mu)))
    }

    fn __repr__(&self) -> String {
        format!("Model(n_x={}, n_mu={}, eps={})", self.inner.n_x(), self.inner.n_mu(), self.inner.eps)
    }
}

/// Factorization `X S Vᵀ`.
#[pyclass(name = "LowRankState", frozen)]
struct PyState {
    inner: LowRankState,
}

#[pymethods]
impl PyState {
    /// Best weighted rank-`r` approximation; returns `(state, delta0)`.
    #[staticmethod]
    fn from_full(model: &PyModel, f: Vec<Vec<f64>>, r: usize) -> PyResult<(PyState, f64)> {
        let (inner, d) = LowRankState::from_full(&rows_arg(f)?, r, &model.inner).map_err(to_py)?;
        Ok((PyState { inner }, d))
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.x)
    }

    #[getter]
    fn s(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.s)
    }

    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.v)
    }

    fn reconstruct(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.inner.reconstruct())
    }

    fn weighted_norm(&self) -> f64 {
        self.inner.weighted_norm()
    }

    fn orthonormality_defects(&self, model: &PyModel) -> PyResult<(f64, f64)> {
        self.inner.orthonormality_defects(&model.inner).map_err(to_py)
    }

    /// Text checkpoint.
    fn dumps(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_to(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn loads(text: &str) -> PyResult<PyState> {
        Ok(PyState { inner: LowRankState::read_from(text.as_bytes()).map_err(to_py)? })
    }
}

/// `(nodes, weights)` of the `n`-point Gauss–Legendre rule.
#[pyfunction]
fn gauss_legendre_rule(n: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let q = gauss_legendre(n).map_err(to_py)?;
    Ok((q.nodes, q.weights))
}

/// One step of `scheme` from a low-rank state.
#[pyfunction]
#[pyo3(signature = (model, state, scheme, dt, substep_solver = "exponential", seed = None))]
fn step(
    model: &PyModel,
    state: &PyState,
    scheme: &str,
    dt: f64,
    substep_solver: &str,
    seed: Option<u64>,
) -> PyResult<PyState> {
    let cfg = step_config(dt, substep_solver, seed)?;
    let f = match parse_scheme(scheme).map_err(PyValueError::new_err)? {
        Scheme::Gap => rte_lowrank::gap_step,
        Scheme::Psi => rte_lowrank::psi_step,
        Scheme::Bug => rte_lowrank::bug_step,
        Scheme::Reference => return Err(PyValueError::new_err("use reference_step for the full-rank solver")),
    };
    Ok(PyState { inner: f(&model.inner, &state.inner, &cfg).map_err(to_py)? })
}

#[pyfunction]
fn reference_step(model: &PyModel, f: Vec<Vec<f64>>, dt: f64) -> PyResult<Vec<Vec<f64>>> {
    let cfg = StepConfig::new(dt);
    Ok(matrix_to_rows(&rte_lowrank::reference_step(&model.inner, &rows_arg(f)?, &cfg).map_err(to_py)?))
}

/// `n_steps` steps of `scheme`; returns the final full matrix.
#[pyfunction]
#[pyo3(signature = (model, f0, scheme, dt, n_steps, rank = None, substep_solver = "exponential", seed = None))]
#[allow(clippy::too_many_arguments)]
fn run(
    model: &PyModel,
    f0: Vec<Vec<f64>>,
    scheme: &str,
    dt: f64,
    n_steps: usize,
    rank: Option<usize>,
    substep_solver: &str,
    seed: Option<u64>,
) -> PyResult<Vec<Vec<f64>>> {
    let scheme = parse_scheme(scheme).map_err(PyValueError::new_err)?;
    let cfg = step_config(dt, substep_solver, seed)?;
    let f0 = rows_arg(f0)?;
    let initial = match (scheme, rank) {
        (Scheme::Reference, _) => Initial::Full(f0),
        (_, Some(r)) => Initial::State(LowRankState::from_full(&f0, r, &model.inner).map_err(to_py)?.0),
        (_, None) => return Err(PyValueError::new_err("low-rank schemes need `rank`")),
    };
    let out = integrate(&model.inner, initial, scheme, &cfg, n_steps).map_err(to_py)?;
    Ok(matrix_to_rows(&out.full))
}

/// Runs a CLI command (`run`, `sweep-eps`, `sweep-dt`, `singvals`,
/// `compare`) on a JSON config and returns the result as JSON.
#[pyfunction]
#[pyo3(signature = (command, config_json, workers = 1))]
fn run_experiment(command: &str, config_json: &str, workers: usize) -> PyResult<String> {
    let cfg = RunConfig::from_json_str(config_json).map_err(to_py)?;
    let json = |v: Result<String, serde_json::Error>| v.map_err(|e| PyValueError::new_err(e.to_string()));
    match command {
        "run" => json(serde_json::to_string(&cmd_run(&cfg).map_err(to_py)?)),
        "sweep-eps" => json(serde_json::to_string(&cmd_sweep_eps(&cfg, workers).map_err(to_py)?)),
        "sweep-dt" => json(serde_json::to_string(&cmd_sweep_dt(&cfg, workers).map_err(to_py)?)),
        "singvals" => json(serde_json::to_string(&cmd_singvals(&cfg).map_err(to_py)?)),
        "compare" => json(serde_json::to_string(&cmd_compare(&cfg, workers).map_err(to_py)?)),
        other => Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    }
}

#[pymodule]
fn rte_lowrank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyState>()?;
    m.add_function(wrap_pyfunction!(gauss_legendre_rule, m)?)?;
    m.add_function(wrap_pyfunction!(step, m)?)?;
    m.add_function(wrap_pyfunction!(reference_step, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
