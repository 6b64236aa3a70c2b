//! Python bindings: scenarios, both solvers, verification and the attainable-set probe.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use olp::attainable::{sample_expected_endpoints, CloudOptions};
use olp::direct::solve_direct;
use olp::indirect::VerifyOptions;
use olp::scenarios::{self, ScenarioParams};
use olp::{
    expected_cost, solve_pmp_star, verify_extremal, ControlSignal, EnsembleRule, Error, PenaltyMode, SolverConfig,
};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Contract(_) | Error::UnknownScenario { .. } | Error::NotPositiveSemidefinite { .. } => {
            PyValueError::new_err(err.to_string())
        }
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

/// Builds a solver configuration from keyword-style settings.
pub fn solver_config(
    order: usize,
    samples: Option<usize>,
    seed: u64,
    tolerance: f64,
    max_iterations: usize,
    penalty_mode: &str,
) -> Result<SolverConfig, String> {
    let ensemble = match samples {
        Some(samples) => EnsembleRule::MonteCarlo { samples },
        None => EnsembleRule::Quadrature { order },
    };
    let mode: PenaltyMode = penalty_mode.parse()?;
    Ok(SolverConfig { ensemble, seed, tolerance, max_iterations, penalty_mode: Some(mode), ..SolverConfig::default() })
}

#[pyclass(name = "SolveResult", module = "openloop_pmp", frozen)]
pub struct PySolveResult {
    inner: olp::SolveResult,
}

#[pymethods]
impl PySolveResult {
    /// Control node values, node-major.
    #[getter]
    fn control(&self) -> Vec<f64> {
        self.inner.control.values().to_vec()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.control.grid().times().collect()
    }

    #[getter]
    fn expected_cost(&self) -> f64 {
        self.inner.expected_cost
    }

    #[getter]
    fn total_cost(&self) -> f64 {
        self.inner.total_cost()
    }

    #[getter]
    fn penalty_offset(&self) -> f64 {
        self.inner.penalty_offset
    }

    #[getter]
    fn residual_max(&self) -> f64 {
        self.inner.residual_max
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.inner.nu
    }

    #[getter]
    fn termination(&self) -> String {
        format!("{:?}", self.inner.termination).to_lowercase()
    }

    fn __repr__(&self) -> String {
        format!(
            "SolveResult(total_cost={}, residual_max={:e}, iterations={}, converged={})",
            self.inner.total_cost(),
            self.inner.residual_max,
            self.inner.iterations,
            if self.inner.converged { "True" } else { "False" }
        )
    }
}

#[pyclass(name = "Scenario", module = "openloop_pmp", frozen)]
pub struct PyScenario {
    inner: scenarios::Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (name = "cheapest-stop", x0 = 1.0, v0 = 1.0, k = 1.0, t1 = 1.0, steps = 100))]
    fn new(name: &str, x0: f64, v0: f64, k: f64, t1: f64, steps: usize) -> PyResult<Self> {
        let params = ScenarioParams { x0, v0, k, t1, steps };
        Ok(Self { inner: scenarios::Scenario::by_name(name, &params).map_err(to_py)? })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.system.state_dim()
    }

    #[getter]
    fn control_dim(&self) -> usize {
        self.inner.system.control_dim()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.grid.times().collect()
    }

    #[pyo3(signature = (order = 5, samples = None, seed = 0, tolerance = 1e-8, max_iterations = 5000, penalty_mode = "terminal"))]
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        py: Python<'_>,
        order: usize,
        samples: Option<usize>,
        seed: u64,
        tolerance: f64,
        max_iterations: usize,
        penalty_mode: &str,
    ) -> PyResult<PySolveResult> {
        let cfg = solver_config(order, samples, seed, tolerance, max_iterations, penalty_mode).map_err(PyValueError::new_err)?;
        let s = &self.inner;
        let inner = py
            .detach(|| solve_pmp_star(&s.system, &s.distribution, &s.cost, &s.grid, &cfg))
            .map_err(to_py)?;
        Ok(PySolveResult { inner })
    }

    #[pyo3(signature = (order = 5, samples = None, seed = 0, tolerance = 1e-8, max_iterations = 5000, penalty_mode = "terminal"))]
    #[allow(clippy::too_many_arguments)]
    fn solve_direct(
        &self,
        py: Python<'_>,
        order: usize,
        samples: Option<usize>,
        seed: u64,
        tolerance: f64,
        max_iterations: usize,
        penalty_mode: &str,
    ) -> PyResult<PySolveResult> {
        let cfg = solver_config(order, samples, seed, tolerance, max_iterations, penalty_mode).map_err(PyValueError::new_err)?;
        let s = &self.inner;
        let inner = py
            .detach(|| solve_direct(&s.system, &s.distribution, &s.cost, &s.grid, &cfg))
            .map_err(to_py)?;
        Ok(PySolveResult { inner })
    }

    /// Expected cost of node values `control` in terminal-penalty form.
    #[pyo3(signature = (control, order = 5))]
    fn expected_cost(&self, control: Vec<f64>, order: usize) -> PyResult<f64> {
        let s = &self.inner;
        let u = ControlSignal::from_values(s.grid, s.system.control_dim(), control).map_err(to_py)?;
        let ensemble = s.distribution.discretize(EnsembleRule::Quadrature { order }, 0).map_err(to_py)?;
        expected_cost(&s.system, &s.cost, &ensemble, &u, &s.grid).map_err(to_py)
    }

    /// Re-checks a result; returns a dict of the individual checks.
    fn verify<'py>(&self, py: Python<'py>, result: &PySolveResult) -> PyResult<Bound<'py, PyDict>> {
        let s = &self.inner;
        let r = verify_extremal(&result.inner, &s.system, &s.distribution, &s.cost, &s.grid, &VerifyOptions::default())
            .map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("passed", r.passed())?;
        d.set_item("residual_max", r.residual_max)?;
        d.set_item("worst_node", r.worst_node)?;
        d.set_item("failing_nodes", r.failing_nodes.clone())?;
        d.set_item("hamiltonian_spread", r.hamiltonian_spread)?;
        d.set_item("nontrivial", r.nontrivial)?;
        d.set_item("best_improvement", r.best_improvement)?;
        Ok(d)
    }

    /// Expected endpoints `(cost, state)` of random open-loop controls.
    #[pyo3(signature = (n_controls, amplitude, seed = 0, knots = None, order = 5))]
    fn attainable(
        &self,
        py: Python<'_>,
        n_controls: usize,
        amplitude: f64,
        seed: u64,
        knots: Option<usize>,
        order: usize,
    ) -> PyResult<Vec<(f64, Vec<f64>)>> {
        let s = &self.inner;
        let options = CloudOptions { ensemble: EnsembleRule::Quadrature { order }, knots };
        let cloud = py
            .detach(|| sample_expected_endpoints(&s.system, &s.distribution, &s.cost, &s.grid, n_controls, amplitude, seed, &options))
            .map_err(to_py)?;
        Ok(cloud.points.into_iter().map(|p| (p.cost, p.state)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?}, steps={})", self.inner.name, self.inner.grid.n_steps())
    }
}

/// Registered scenario names.
#[pyfunction]
fn scenario_names() -> Vec<&'static str> {
    scenarios::NAMES.to_vec()
}

#[pymodule]
fn openloop_pmp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PySolveResult>()?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    m.add("CHEAPEST_STOP_REFERENCE_COST", scenarios::CHEAPEST_STOP_REFERENCE_COST)?;
    Ok(())
}
