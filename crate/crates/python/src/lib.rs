//! Python bindings: systems, value networks, training, certification and
//! reachable-set queries.
//!
//! Structured results (certificates, grids) cross the boundary as JSON
//! strings; `python/smoke_test.py` shows the intended use.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use certreach::certify::{certify_network, CertifierConfig};
use certreach::reach::{classify, epsilon_total, export_grid, CertifiedValue};
use certreach::system::SystemSpec;
use certreach::train::{run_curriculum, TrainConfig};
use certreach::valuenet::{NetConfig, ValueNet};
use certreach::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn toml_section<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(s) => toml::from_str(s).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

/// A control system read from a `[system]` TOML table.
#[pyclass(name = "System", module = "certreach_py", frozen)]
struct PySystem {
    inner: SystemSpec,
}

#[pymethods]
impl PySystem {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        SystemSpec::load(&path).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        SystemSpec::from_toml_str(text).map(|inner| Self { inner }).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn t0(&self) -> f64 {
        self.inner.t0
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.t1
    }

    fn target(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.eval_target(&x).map_err(py_err)
    }

    /// Hamiltonian at `(t, x, p)`.
    fn hamiltonian(&self, t: f64, x: Vec<f64>, p: Vec<f64>) -> PyResult<f64> {
        let m = self.inner.state_dim();
        if x.len() != m || p.len() != m {
            return Err(PyValueError::new_err(format!("x and p need {m} entries")));
        }
        let tape = self.inner.hamiltonian_tape().map_err(py_err)?;
        let mut dh = vec![0.0; m];
        tape.eval(t, &x, &p, &mut Vec::new(), &mut Vec::new(), &mut dh).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("System(name={:?}, states={})", self.inner.name, self.inner.state_dim())
    }
}

/// Sine-activated value network `V(t, x)`.
#[pyclass(name = "ValueNet", module = "certreach_py", skip_from_py_object)]
#[derive(Clone)]
struct PyValueNet {
    inner: ValueNet,
}

#[pymethods]
impl PyValueNet {
    #[new]
    #[pyo3(signature = (state_dim, hidden = vec![16], omega = 30.0, degree = 2, seed = 0))]
    fn new(state_dim: usize, hidden: Vec<usize>, omega: f64, degree: u32, seed: u64) -> PyResult<Self> {
        let cfg = NetConfig { state_dim, hidden, omega, degree, seed };
        ValueNet::new(cfg).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ValueNet::load(&path).map(|inner| Self { inner }).map_err(py_err)
    }

    /// Save with optional metadata given as a JSON object string.
    #[pyo3(signature = (path, metadata = None))]
    fn save(&self, path: PathBuf, metadata: Option<&str>) -> PyResult<()> {
        let meta = match metadata {
            None => serde_json::Map::new(),
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        };
        self.inner.save(&path, meta).map_err(py_err)
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.config().state_dim
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    fn __call__(&self, t: f64, x: Vec<f64>) -> PyResult<f64> {
        self.inner.forward(t, &x).map_err(py_err)
    }

    /// `(∂V/∂t, ∂V/∂x)`.
    fn gradients(&self, t: f64, x: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        self.inner.input_gradients(t, &x).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!("ValueNet(state_dim={}, hidden={:?}, omega={})", c.state_dim, c.hidden, c.omega)
    }
}

/// Run the training curriculum; `config` is the body of a `[train]` table.
/// Returns the trained network, whether it converged, and the epoch count.
#[pyfunction]
#[pyo3(signature = (system, net, config = None))]
fn train(py: Python<'_>, system: &PySystem, net: &PyValueNet, config: Option<&str>) -> PyResult<(PyValueNet, bool, usize)> {
    let cfg: TrainConfig = toml_section(config)?;
    let net = net.inner.clone();
    let out = py.detach(|| run_curriculum(net, &system.inner, &cfg)).map_err(py_err)?;
    let converged = matches!(out.status, certreach::train::TrainStatus::Converged);
    Ok((PyValueNet { inner: out.net }, converged, out.epochs))
}

/// Certify `|R1| <= eps1` and `|R2| <= eps2`; returns the certificate as
/// JSON. `config` is the body of a `[certify]` table.
#[pyfunction]
#[pyo3(signature = (system, net, eps1, eps2, config = None))]
fn certify(py: Python<'_>, system: &PySystem, net: &PyValueNet, eps1: f64, eps2: f64, config: Option<&str>) -> PyResult<String> {
    let cfg: CertifierConfig = toml_section(config)?;
    cfg.validate().map_err(py_err)?;
    let result = py.detach(|| certify_network(&net.inner, &system.inner, eps1, eps2, &cfg)).map_err(py_err)?;
    serde_json::to_string(&result.to_json(&cfg, eps1, eps2)).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A network with certified residual bounds.
#[pyclass(name = "CertifiedValue", module = "certreach_py", frozen)]
struct PyCertifiedValue {
    inner: CertifiedValue,
}

#[pymethods]
impl PyCertifiedValue {
    #[new]
    fn new(net: &PyValueNet, system: &PySystem, eps1: f64, eps2: f64) -> PyResult<Self> {
        CertifiedValue::new(net.inner.clone(), &system.inner, eps1, eps2).map(|inner| Self { inner }).map_err(py_err)
    }

    fn epsilon_total(&self, t: f64) -> PyResult<f64> {
        epsilon_total(&self.inner, t).map_err(py_err)
    }

    /// One of `in_under`, `in_over_only`, `outside`.
    fn classify(&self, t: f64, x: Vec<f64>) -> PyResult<String> {
        classify(&self.inner, t, &x).map(|c| c.to_string()).map_err(py_err)
    }

    /// Grid rows `(x, value, class)` at time `t`.
    fn grid(&self, t: f64, resolution: usize) -> PyResult<Vec<(Vec<f64>, f64, String)>> {
        let rows = export_grid(&self.inner, t, resolution).map_err(py_err)?;
        Ok(rows.into_iter().map(|r| (r.x, r.value, r.class.to_string())).collect())
    }
}

#[pymodule]
fn certreach_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyValueNet>()?;
    m.add_class::<PyCertifiedValue>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
