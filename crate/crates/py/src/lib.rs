//! Python bindings: scenarios, dense and stochastic solvers, thermodynamic
//! functionals, and the batch runner.

use std::collections::BTreeMap;

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use septhermo::cli::{self, ResultTable, RunConfig};
use septhermo::linalg::CMat;
use septhermo::open::{lindblad_propagate, run_ensemble, steady_state, Observable, RunOptions};
use septhermo::scenarios::{ScenarioName, ScenarioSpec};
use septhermo::tensor::{partial_trace as trace_out, DensityMatrix, SubsystemLayout};
use septhermo::{thermo, Mode};

pub type Matrix = Vec<Vec<Complex64>>;

fn err(e: septhermo::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Row-major nested lists to a square matrix.
pub fn to_cmat(rows: &Matrix) -> PyResult<CMat> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!("expected a square {n}×{n} matrix")));
    }
    Ok(CMat::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn from_cmat(m: &CMat) -> Matrix {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "free" => Ok(Mode::Free),
        "constrained" => Ok(Mode::Constrained),
        _ => Err(PyValueError::new_err(format!("mode must be `free` or `constrained`, got `{mode}`"))),
    }
}

/// A built scenario with its model, initial state and energy observable.
#[pyclass(name = "Scenario", module = "septhermo_py")]
pub struct PyScenario {
    inner: septhermo::scenarios::Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (name, params = None))]
    fn new(name: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let name: ScenarioName = name.parse().map_err(err)?;
        let mut spec = ScenarioSpec::new(name);
        for (k, v) in params.unwrap_or_default() {
            spec.set(&k, v).map_err(err)?;
        }
        Ok(Self { inner: spec.build().map_err(err)? })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name().as_str()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.model.dim()
    }

    #[getter]
    fn parties(&self) -> Vec<&'static str> {
        self.inner.parties.clone()
    }

    #[getter]
    fn parameters(&self) -> BTreeMap<String, f64> {
        self.inner.spec.params.clone()
    }

    fn energy(&self) -> Matrix {
        from_cmat(&self.inner.energy)
    }

    fn hamiltonian(&self) -> Matrix {
        from_cmat(self.inner.model.h().matrix())
    }

    fn jump_operators(&self) -> Vec<Matrix> {
        self.inner.model.jumps().iter().map(|l| from_cmat(l.matrix())).collect()
    }

    fn initial_density(&self) -> PyResult<Matrix> {
        Ok(from_cmat(&self.inner.initial_density().map_err(err)?))
    }

    fn steady_state(&self) -> PyResult<Matrix> {
        Ok(from_cmat(steady_state(&self.inner.model).map_err(err)?.matrix()))
    }

    /// Dense free evolution: `(times, states)`.
    #[pyo3(signature = (t_end, dt, stride = 1))]
    fn propagate(&self, t_end: f64, dt: f64, stride: usize) -> PyResult<(Vec<f64>, Vec<Matrix>)> {
        let rho0 = DensityMatrix::new(self.inner.initial_density().map_err(err)?, self.inner.layout().clone())
            .map_err(err)?;
        let s = lindblad_propagate(&self.inner.model, &rho0, t_end, dt, stride).map_err(err)?;
        Ok((s.times, s.states.iter().map(|r| from_cmat(r.matrix())).collect()))
    }

    /// Quantum-jump ensemble of `Re⟨O⟩` for each operator: `(times, means, stderrs)`,
    /// indexed `[operator][time]`.
    #[pyo3(signature = (operators, mode, t_end, dt, n_traj, seed = 0, stride = 1, lambda_factor = 10.0, jobs = 1))]
    #[allow(clippy::too_many_arguments)]
    fn ensemble(
        &self,
        py: Python<'_>,
        operators: Vec<Matrix>,
        mode: &str,
        t_end: f64,
        dt: f64,
        n_traj: usize,
        seed: u64,
        stride: usize,
        lambda_factor: f64,
        jobs: usize,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mode = parse_mode(mode)?;
        let obs = operators
            .iter()
            .map(|o| to_cmat(o).map(Observable::Expectation))
            .collect::<PyResult<Vec<_>>>()?;
        let cfg = septhermo::open::McwfConfig {
            dt,
            t_end,
            n_traj,
            seed,
            lambda_factor,
            output_stride: stride,
            mode,
            ..Default::default()
        };
        let opts = RunOptions { jobs, ..Default::default() };
        let sc = &self.inner;
        let ens = py.detach(|| run_ensemble(&sc.model, &sc.initial, &cfg, &obs, &opts)).map_err(err)?;
        let means = (0..ens.channels).map(|c| ens.channel_mean(c)).collect();
        let errs = (0..ens.channels).map(|c| ens.channel_stderr(c)).collect();
        Ok((ens.times, means, errs))
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?}, {:?})", self.inner.name().as_str(), self.inner.spec.params)
    }
}

/// Validated run configuration.
#[pyclass(name = "RunConfig", module = "septhermo_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { inner: cli::parse_config(text).map_err(err)? })
    }

    #[staticmethod]
    fn for_scenario(name: &str) -> PyResult<Self> {
        let name: ScenarioName = name.parse().map_err(err)?;
        Ok(Self { inner: RunConfig::for_scenario(name) })
    }

    /// Copy with the seed and/or trajectory count replaced.
    #[pyo3(signature = (seed = None, n_traj = None))]
    fn with_overrides(&self, seed: Option<u64>, n_traj: Option<usize>) -> PyResult<Self> {
        let ov = cli::Overrides { seed, n_traj, ..Default::default() };
        Ok(Self { inner: cli::apply_overrides(&self.inner, &ov).map_err(err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn scenario(&self) -> &'static str {
        self.inner.scenario.name.as_str()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.mcwf.seed
    }

    #[getter]
    fn n_traj(&self) -> usize {
        self.inner.mcwf.n_traj
    }
}

/// Results table of a run.
#[pyclass(name = "Table", module = "septhermo_py")]
pub struct PyTable {
    inner: ResultTable,
    manifest: Option<String>,
}

#[pymethods]
impl PyTable {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ResultTable::read(text.as_bytes()).map_err(err)?, manifest: None })
    }

    #[getter]
    fn header(&self) -> Vec<String> {
        self.inner.header().into_iter().map(String::from).collect()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn manifest(&self) -> Option<String> {
        self.manifest.clone()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner
            .column(name)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyValueError::new_err(format!("no column `{name}`")))
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }
}

/// Runs a configuration in memory.
#[pyfunction]
#[pyo3(signature = (config, jobs = 1))]
fn run(py: Python<'_>, config: &PyRunConfig, jobs: usize) -> PyResult<PyTable> {
    let cfg = config.inner.clone();
    let out = py.detach(|| cli::compute(&cfg, jobs)).map_err(err)?;
    let manifest = Some(out.manifest());
    Ok(PyTable { inner: out.table, manifest })
}

/// Column comparison: list of `(left, right, max_abs, mean_abs, passed)`.
#[pyfunction]
#[pyo3(signature = (a, b, pairs = None))]
fn compare(a: &PyTable, b: &PyTable, pairs: Option<Vec<(String, String)>>) -> PyResult<Vec<(String, String, f64, f64, bool)>> {
    let r = match pairs {
        Some(p) => cli::compare_columns(&a.inner, &b.inner, &p),
        None => cli::compare_tables(&a.inner, &b.inner),
    }
    .map_err(err)?;
    Ok(r.columns.into_iter().map(|c| (c.left, c.right, c.max_abs, c.mean_abs, c.passed)).collect())
}

#[pyfunction]
fn scenarios() -> Vec<&'static str> {
    ScenarioName::ALL.iter().map(|n| n.as_str()).collect()
}

#[pyfunction]
fn schema() -> String {
    cli::schema_text()
}

/// Reduced density matrix on the subsystems in `keep`.
#[pyfunction]
fn partial_trace(rho: Matrix, dims: Vec<usize>, keep: Vec<usize>) -> PyResult<Matrix> {
    let layout = SubsystemLayout::new(dims).map_err(err)?;
    let rho = DensityMatrix::new(to_cmat(&rho)?, layout).map_err(err)?;
    Ok(from_cmat(trace_out(&rho, &keep).map_err(err)?.matrix()))
}

#[pyfunction]
fn von_neumann_entropy(rho: Matrix) -> PyResult<f64> {
    Ok(thermo::von_neumann_entropy(&to_cmat(&rho)?))
}

#[pyfunction]
fn relative_entropy(rho: Matrix, sigma: Matrix) -> PyResult<f64> {
    thermo::relative_entropy(&to_cmat(&rho)?, &to_cmat(&sigma)?).map_err(err)
}

#[pyfunction]
fn gibbs_state(h: Matrix, beta: f64) -> PyResult<Matrix> {
    Ok(from_cmat(&thermo::gibbs_state(&to_cmat(&h)?, beta)))
}

#[pymodule]
fn septhermo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyTable>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(schema, m)?)?;
    m.add_function(wrap_pyfunction!(partial_trace, m)?)?;
    m.add_function(wrap_pyfunction!(von_neumann_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(relative_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(gibbs_state, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
