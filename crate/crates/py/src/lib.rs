//! Python bindings: the chain oracle, the augmented solvers and the
//! experiment runner.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use bethe_core::bench::{run_experiment_config, ExperimentConfig, Overrides};
use bethe_core::energy::{EnergyFile, EnergySpec};
use bethe_core::inference::{solve as solve_augmented, Algorithm, AugmentedProblem, SolverConfig};
use bethe_core::{bethe_entropy, validate_marginals, ChainModel, Labeling, MarginalVector};

fn to_py(e: bethe_core::Error) -> PyErr {
    match e {
        bethe_core::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Chain CRF parameters: `node[i][a]` and row-major `edge[e][a * k + b]`.
#[pyclass(name = "ChainModel", module = "bethe", frozen)]
struct PyChainModel {
    inner: ChainModel,
}

#[pymethods]
impl PyChainModel {
    #[new]
    fn new(node: Vec<Vec<f64>>, edge: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = ChainModel::from_tables(&node, &edge).map_err(to_py)?;
        Ok(PyChainModel { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = ChainModel::from_json(text).map_err(to_py)?;
        Ok(PyChainModel { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    /// Flat parameter vector, nodes first.
    fn params(&self) -> Vec<f64> {
        self.inner.as_slice().to_vec()
    }

    fn marginals(&self) -> PyResult<PyMarginals> {
        let r = bethe_core::marginals(&self.inner).map_err(to_py)?;
        Ok(PyMarginals { inner: r.marginals })
    }

    fn log_partition(&self) -> PyResult<f64> {
        bethe_core::log_partition(&self.inner).map_err(to_py)
    }

    /// Highest-scoring labeling.
    fn map(&self) -> PyResult<Vec<usize>> {
        Ok(bethe_core::map_decode(&self.inner).map_err(to_py)?.as_slice().to_vec())
    }

    fn score(&self, labels: Vec<usize>) -> PyResult<f64> {
        self.inner.score(&Labeling::new(labels)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("ChainModel(n={}, k={})", self.inner.n(), self.inner.k())
    }
}

#[pyclass(name = "Marginals", module = "bethe", frozen)]
struct PyMarginals {
    inner: MarginalVector,
}

#[pymethods]
impl PyMarginals {
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn node(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.n() {
            return Err(PyValueError::new_err(format!("node {i} out of range")));
        }
        Ok(self.inner.node(i).to_vec())
    }

    /// Row-major `k × k` table of edge `e`.
    fn edge(&self, e: usize) -> PyResult<Vec<f64>> {
        if e + 1 >= self.inner.n() {
            return Err(PyValueError::new_err(format!("edge {e} out of range")));
        }
        Ok(self.inner.edge(e).to_vec())
    }

    fn flat(&self) -> Vec<f64> {
        self.inner.as_slice().to_vec()
    }

    fn bethe_entropy(&self) -> PyResult<f64> {
        bethe_entropy(&self.inner).map_err(to_py)
    }

    /// Whether the vector lies in the local polytope.
    fn is_valid(&self) -> bool {
        validate_marginals(&self.inner).passed()
    }

    fn __repr__(&self) -> String {
        format!("Marginals(n={}, k={})", self.inner.n(), self.inner.k())
    }
}

/// A non-local energy as stored in an energy file.
#[pyclass(name = "Energy", module = "bethe", frozen)]
struct PyEnergy {
    spec: EnergySpec,
}

#[pymethods]
impl PyEnergy {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyEnergy {
            spec: EnergyFile::from_toml(text).map_err(to_py)?.spec,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyEnergy {
            spec: EnergyFile::load(path).map_err(to_py)?.spec,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        EnergyFile::new(self.spec.clone()).to_toml().map_err(to_py)
    }

    #[getter]
    fn num_psi(&self) -> usize {
        self.spec.num_psi()
    }

    fn initial_psi(&self) -> Vec<f64> {
        self.spec.initial_psi()
    }
}

#[pyclass(name = "Solution", module = "bethe", frozen, get_all)]
struct PySolution {
    marginals: Py<PyMarginals>,
    /// `θ - ∇L(μ*)`, the parameters MAP prediction runs on.
    modified: Py<PyChainModel>,
    objective: f64,
    objectives: Vec<f64>,
    iterations: usize,
    converged: bool,
    infeasible_iterates: usize,
    labels: Vec<usize>,
}

#[pymethods]
impl PySolution {
    fn __repr__(&self) -> String {
        format!(
            "Solution(objective={:.6}, iterations={}, converged={})",
            self.objective,
            self.iterations,
            if self.converged { "True" } else { "False" }
        )
    }
}

/// Minimizes `-H_B(μ) - ⟨θ, μ⟩ + L(μ)` over the local polytope.
#[pyfunction]
#[pyo3(signature = (model, energy=None, algorithm="rda", max_iters=500, tolerance=1e-6, beta=0.0))]
fn solve(
    py: Python<'_>,
    model: &PyChainModel,
    energy: Option<&PyEnergy>,
    algorithm: &str,
    max_iters: usize,
    tolerance: f64,
    beta: f64,
) -> PyResult<PySolution> {
    let cfg = SolverConfig {
        algorithm: algorithm.parse::<Algorithm>().map_err(to_py)?,
        max_iters,
        tolerance,
        beta,
        ..SolverConfig::default()
    };
    let theta = &model.inner;
    let spec = energy.map_or(EnergySpec::Zero, |e| e.spec.clone());
    let run = || -> bethe_core::Result<_> {
        let energy = spec.instantiate(theta.layout())?;
        let problem = AugmentedProblem::new(theta, &energy)?;
        let out = solve_augmented(&problem, &cfg)?;
        let objective = problem.objective(&out.marginals)?;
        let labels = bethe_core::map_decode(&out.modified_params)?;
        Ok((out, objective, labels))
    };
    let (out, objective, labels) = py.detach(run).map_err(to_py)?;
    Ok(PySolution {
        marginals: Py::new(py, PyMarginals { inner: out.marginals })?,
        modified: Py::new(py, PyChainModel { inner: out.modified_params })?,
        objective,
        objectives: out.trace.steps.iter().map(|s| s.objective).collect(),
        iterations: out.trace.iterations(),
        converged: out.trace.converged,
        infeasible_iterates: out.trace.infeasible_count(),
        labels: labels.as_slice().to_vec(),
    })
}

/// Runs an experiment config and returns the report as JSON. With `out`,
/// the report, histories and traces are also written there.
#[pyfunction]
#[pyo3(signature = (config, out=None, seed=None, max_iters=None))]
fn run_experiment(
    py: Python<'_>,
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    max_iters: Option<usize>,
) -> PyResult<String> {
    let run = || -> bethe_core::Result<String> {
        let mut cfg = ExperimentConfig::load(&config)?;
        cfg.apply(&Overrides {
            seed,
            max_iters,
            solver: None,
        })?;
        let output = run_experiment_config(&cfg)?;
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            output.save(dir)?;
        }
        Ok(serde_json::to_string(&output.report)?)
    };
    py.detach(run).map_err(to_py)
}

#[pymodule]
fn bethe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChainModel>()?;
    m.add_class::<PyMarginals>()?;
    m.add_class::<PyEnergy>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
