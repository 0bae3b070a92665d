//! Python bindings: resolved experiments, single paths, skeleton solves and the
//! config-driven runner.

use std::path::PathBuf;
use std::sync::Arc;

use ::fspde::dynamics;
use ::fspde::harness::{self, Overrides, Resolved};
use ::fspde::ldp::{self, Control, MarkCells};
use ::fspde::solver::{self, PathKey};
use ::fspde::spectral::{build_basis, DomainSpec, EigenBasis, SpectralField};
use ::fspde::Error;
use pyo3::exceptions::{PyArithmeticError, PyAssertionError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NonFinite { .. } | Error::TooManyAborts { .. } => PyArithmeticError::new_err(e.to_string()),
        Error::Infeasible { .. } => PyAssertionError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Sine eigenbasis of `δ + (−Δ)^γ` on `(0, length)`.
#[pyclass(name = "Basis", frozen)]
struct PyBasis {
    inner: Arc<EigenBasis>,
}

#[pymethods]
impl PyBasis {
    #[new]
    fn new(length: f64, gamma: f64, delta: f64, n_modes: usize) -> PyResult<Self> {
        let domain = DomainSpec::interval(length).map_err(to_py)?;
        let inner = build_basis(domain, gamma, delta, n_modes).map_err(to_py)?;
        Ok(PyBasis { inner: Arc::new(inner) })
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.inner.n_modes()
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    /// Values at the `n_grid` interior points of a uniform grid.
    fn synthesize(&self, coeffs: Vec<f64>, n_grid: usize) -> PyResult<Vec<f64>> {
        self.inner.synthesize(&SpectralField::from_coeffs(coeffs), n_grid).map_err(to_py)
    }

    fn analyze(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.analyze(&values).map_err(to_py)?.into_coeffs())
    }

    fn norm_h(&self, coeffs: Vec<f64>) -> PyResult<f64> {
        self.inner.norm_h(&SpectralField::from_coeffs(coeffs)).map_err(to_py)
    }

    fn norm_v(&self, coeffs: Vec<f64>) -> PyResult<f64> {
        self.inner.norm_v(&SpectralField::from_coeffs(coeffs)).map_err(to_py)
    }

    fn fractional_power(&self, coeffs: Vec<f64>, r: f64) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .fractional_power(&SpectralField::from_coeffs(coeffs), r)
            .map_err(to_py)?
            .into_coeffs())
    }
}

/// An experiment config resolved against its preset.
#[pyclass(name = "Experiment", frozen)]
struct PyExperiment {
    resolved: Resolved,
}

#[pymethods]
impl PyExperiment {
    /// Parse TOML text; raises `ValueError` on unknown keys or bad values.
    #[new]
    fn new(config: &str) -> PyResult<Self> {
        let resolved = harness::parse_config(config).and_then(|c| c.resolve()).map_err(to_py)?;
        Ok(PyExperiment { resolved })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let resolved = harness::load_config(&path).and_then(|c| c.resolve()).map_err(to_py)?;
        Ok(PyExperiment { resolved })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.resolved.kind.name()
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.resolved.model.n_modes()
    }

    #[getter]
    fn initial(&self) -> Vec<f64> {
        self.resolved.u0.coeffs().to_vec()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.resolved.warnings.clone()
    }

    /// Certified noise constants and regime flags.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = &self.resolved.model;
        let nc = m.noise_constants();
        let d = PyDict::new(py);
        for (k, v) in [
            ("k1", m.drift.k1),
            ("k2", m.drift.k2),
            ("k3", m.drift.k3),
            ("k4", m.drift.k4),
            ("c_g", nc.c_g),
            ("c_h", nc.c_h),
            ("l1", nc.l1),
            ("alpha1", nc.alpha1),
            ("alpha2", nc.alpha2),
            ("beta1", nc.beta1),
            ("beta2", nc.beta2),
            ("contraction_rate", nc.contraction_rate),
        ] {
            d.set_item(k, v)?;
        }
        d.set_item("attractor_ok", nc.attractor_ok)?;
        d.set_item("ergodic_ok", nc.ergodic_ok)?;
        Ok(d)
    }

    fn absorbing_radius(&self) -> PyResult<f64> {
        dynamics::absorbing_radius(&self.resolved.model).map_err(to_py)
    }

    /// One sample path: `(times, states)` with one coefficient list per saved time.
    #[pyo3(signature = (seed, path = 0))]
    fn simulate(&self, py: Python<'_>, seed: u64, path: u64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let r = &self.resolved;
        let traj = py
            .detach(|| solver::solve_path(&r.model, &r.u0, &r.grid, &r.opts, PathKey::new(seed, path)))
            .map_err(to_py)?;
        Ok((traj.times, traj.states.into_iter().map(|s| s.into_coeffs()).collect()))
    }

    /// Skeleton solve under piecewise-constant `sigma[cell][mode]` with `ρ ≡ 1`;
    /// returns `(times, states, cost)`.
    fn skeleton(&self, py: Python<'_>, sigma: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, f64)> {
        let r = &self.resolved;
        let n = r.model.n_modes();
        let cells = sigma.len();
        let mut control = Control::zero(cells, n, MarkCells::none()).map_err(to_py)?;
        for (row, given) in control.sigma.iter_mut().zip(sigma) {
            if given.len() > n {
                return Err(PyValueError::new_err(format!("sigma row has {} values for {n} modes", given.len())));
            }
            row[..given.len()].copy_from_slice(&given);
        }
        let (sol, cost) = py
            .detach(|| {
                let sol = ldp::solve_skeleton(&r.model, &r.u0, &control, &r.grid)?;
                let cost = ldp::control_cost(&control, &r.model.jumps, &r.grid)?;
                Ok::<_, Error>((sol, cost))
            })
            .map_err(to_py)?;
        let t = sol.trajectory;
        Ok((t.times, t.states.into_iter().map(|s| s.into_coeffs()).collect(), cost))
    }

    /// Run the configured experiment and write its outputs; returns a dict with
    /// `passed`, `hash`, `report` and `failures`.
    #[pyo3(signature = (out, seed = None, paths = None, workers = None))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        out: PathBuf,
        seed: Option<u64>,
        paths: Option<usize>,
        workers: Option<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let overrides = Overrides {
            seed,
            paths,
            out: Some(out),
            workers,
        };
        let cfg = self.resolved.config.clone();
        let outcome = py.detach(|| harness::run(&cfg, &overrides)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("passed", outcome.passed())?;
        d.set_item("hash", &outcome.hash)?;
        d.set_item("report", outcome.report.clone())?;
        d.set_item("failures", outcome.failures.clone())?;
        Ok(d)
    }
}

#[pyfunction]
fn describe(kind: &str) -> PyResult<&'static str> {
    harness::describe(kind).map_err(to_py)
}

#[pyfunction]
fn list_presets() -> String {
    harness::list_presets()
}

#[pyfunction]
fn entropy_cost(r: f64) -> f64 {
    ldp::entropy_cost(r)
}

#[pyfunction]
fn linear_quadratic_cost(eigenvalue: f64, horizon: f64, target: f64) -> f64 {
    ldp::linear_quadratic_cost(eigenvalue, horizon, target)
}

#[pymodule]
fn fspde(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBasis>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(describe, m)?)?;
    m.add_function(wrap_pyfunction!(list_presets, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_cost, m)?)?;
    m.add_function(wrap_pyfunction!(linear_quadratic_cost, m)?)?;
    Ok(())
}
