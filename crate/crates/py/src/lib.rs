//! Python bindings: federations, single experiments, harmonization
//! operators and metrics. Configs cross the boundary as JSON strings with
//! the same schema the command-line tool reads.

use std::path::PathBuf;

use fedtrade_core::engine::{self, ExperimentConfig};
use fedtrade_core::harmonize;
use fedtrade_core::metrics::{self, Averaging};
use fedtrade_core::synthdata::{self, FederationSpec, Targets};
use fedtrade_core::FedError;
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(fedtrade, DivergenceError, PyRuntimeError, "Training produced non-finite or exploding parameters.");

fn to_py(e: FedError) -> PyErr {
    match e {
        FedError::Config { .. } | FedError::Shape(_) | FedError::KeyMismatch(_) | FedError::Empty(_) => {
            PyValueError::new_err(e.to_string())
        }
        FedError::Io { .. } | FedError::Manifest { .. } => PyIOError::new_err(e.to_string()),
        FedError::Divergence { .. } => DivergenceError::new_err(e.to_string()),
        FedError::InClient { ref source, .. } if matches!(**source, FedError::Divergence { .. }) => {
            DivergenceError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: serde::de::DeserializeOwned>(json: &str) -> PyResult<T> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Dense float array: `shape` plus row-major `data`.
#[pyclass(name = "Tensor", module = "fedtrade", from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: fedtrade_core::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: fedtrade_core::Tensor::new(shape, data).map_err(to_py)?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.numel()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

fn wrap(t: fedtrade_core::Tensor) -> PyTensor {
    PyTensor { inner: t }
}

/// A generated (or loaded) federation.
#[pyclass(name = "Federation", module = "fedtrade")]
pub struct PyFederation {
    inner: synthdata::Federation,
}

#[pymethods]
impl PyFederation {
    #[getter]
    fn num_clients(&self) -> usize {
        self.inner.clients.len()
    }

    /// Canonical JSON of the spec the federation was generated from.
    #[getter]
    fn spec(&self) -> String {
        serde_json::to_string(&self.inner.spec).expect("spec serialises")
    }

    /// Aggregation weights `n_train_k / sum_j n_train_j`.
    fn weights(&self) -> Vec<f64> {
        self.inner.weights()
    }

    /// `(test, train, val)` sample indices of client `k`.
    fn splits(&self, k: usize) -> PyResult<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        let c = self.client(k)?;
        Ok((c.test.clone(), c.train.clone(), c.val.clone()))
    }

    /// All images of client `k` as a `[N, C, H, W]` tensor.
    fn images(&self, k: usize) -> PyResult<PyTensor> {
        Ok(wrap(self.client(k)?.images.clone()))
    }

    /// Class labels (classification) of client `k`.
    fn labels(&self, k: usize) -> PyResult<Vec<usize>> {
        match &self.client(k)?.targets {
            Targets::Labels(l) => Ok(l.clone()),
            Targets::Masks(_) => Err(PyValueError::new_err("segmentation federation: use masks()")),
        }
    }

    /// Binary masks (segmentation) of client `k` as `[N, H, W]`.
    fn masks(&self, k: usize) -> PyResult<PyTensor> {
        match &self.client(k)?.targets {
            Targets::Masks(m) => Ok(wrap(m.clone())),
            Targets::Labels(_) => Err(PyValueError::new_err("classification federation: use labels()")),
        }
    }

    fn persist(&self, dir: PathBuf) -> PyResult<()> {
        synthdata::persist_federation(&self.inner, &dir).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.spec;
        format!(
            "Federation(task={:?}, clients={}, delta_style={}, delta_content={})",
            s.task,
            s.clients(),
            s.delta_style,
            s.delta_content
        )
    }
}

impl PyFederation {
    fn client(&self, k: usize) -> PyResult<&synthdata::ClientDataset> {
        self.inner
            .clients
            .get(k)
            .ok_or_else(|| PyValueError::new_err(format!("client {k} does not exist ({} clients)", self.inner.clients.len())))
    }
}

/// Generates a federation from a JSON federation spec.
#[pyfunction]
fn make_federation(spec_json: &str) -> PyResult<PyFederation> {
    let spec: FederationSpec = parse(spec_json)?;
    Ok(PyFederation {
        inner: synthdata::make_federation(&spec).map_err(to_py)?,
    })
}

#[pyfunction]
fn load_federation(dir: PathBuf) -> PyResult<PyFederation> {
    Ok(PyFederation {
        inner: synthdata::load_federation(&dir).map_err(to_py)?,
    })
}

/// Outcome of one experiment.
#[pyclass(name = "RunResult", module = "fedtrade")]
pub struct PyRunResult {
    #[pyo3(get)]
    method: String,
    table: engine::ResultTable,
    rounds: Vec<engine::RoundRecord>,
}

#[pymethods]
impl PyRunResult {
    /// `(method, client, metric, value)` rows.
    fn rows(&self) -> Vec<(String, String, String, f64)> {
        self.table
            .rows
            .iter()
            .map(|r| (r.method.clone(), r.client.clone(), r.metric.clone(), r.value))
            .collect()
    }

    /// Value of `metric` for `client` (`"0"`, `"1"`, ... or `"pooled"`).
    fn value(&self, client: &str, metric: &str) -> Option<f64> {
        self.table.value(&self.method, client, metric)
    }

    fn to_csv(&self) -> String {
        self.table.to_csv()
    }

    fn rounds_jsonl(&self) -> String {
        engine::rounds_to_jsonl(&self.rounds)
    }

    fn __repr__(&self) -> String {
        format!("RunResult(method={:?}, rows={})", self.method, self.table.rows.len())
    }
}

/// Runs one experiment described by a JSON experiment config.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<PyRunResult> {
    let config: ExperimentConfig = parse(config_json)?;
    config.validate().map_err(to_py)?;
    let out = py.detach(|| engine::run_experiment(&config)).map_err(to_py)?;
    Ok(PyRunResult {
        method: out.method,
        table: out.table,
        rounds: out.rounds,
    })
}

/// SHA-256 of the canonical form of an experiment config.
#[pyfunction]
fn config_hash(config_json: &str) -> PyResult<String> {
    let config: ExperimentConfig = parse(config_json)?;
    Ok(config.config_hash())
}

#[pyfunction]
fn hist_match(x: &PyTensor, reference: &PyTensor) -> PyResult<PyTensor> {
    harmonize::apply_hist_match(&x.inner, &reference.inner).map(wrap).map_err(to_py)
}

#[pyfunction]
fn fda(x: &PyTensor, reference: &PyTensor, beta: f64) -> PyResult<PyTensor> {
    harmonize::apply_fda(&x.inner, &reference.inner, beta).map(wrap).map_err(to_py)
}

#[pyfunction]
fn adain(x: &PyTensor, reference: &PyTensor) -> PyResult<PyTensor> {
    harmonize::apply_adain(&x.inner, &reference.inner).map(wrap).map_err(to_py)
}

#[pyfunction]
fn mixstyle(x: &PyTensor, peer: &PyTensor, lam: f64) -> PyTensor {
    wrap(harmonize::apply_mixstyle_input_with(&x.inner, &peer.inner, lam))
}

#[pyfunction]
#[pyo3(signature = (x, harmonized, scale = 5.0))]
fn amplified_difference(x: &PyTensor, harmonized: &PyTensor, scale: f64) -> PyResult<PyTensor> {
    harmonize::amplified_difference(&x.inner, &harmonized.inner, scale).map(wrap).map_err(to_py)
}

fn metric_dict<'py>(py: Python<'py>, names: &[&str], values: &[f64]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (n, v) in names.iter().zip(values) {
        d.set_item(n, v)?;
    }
    Ok(d)
}

/// Dice, IoU and friends of a binary prediction against the truth.
#[pyfunction]
fn seg_metrics<'py>(py: Python<'py>, pred: Vec<usize>, truth: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
    let m = metrics::seg_metrics(&pred, &truth).map_err(to_py)?;
    metric_dict(py, &metrics::SegMetrics::NAMES, &m.values())
}

/// Cohen's kappa, accuracy and macro-averaged precision/recall/F1/specificity.
#[pyfunction]
fn cls_metrics<'py>(py: Python<'py>, pred: Vec<usize>, truth: Vec<usize>, classes: usize) -> PyResult<Bound<'py, PyDict>> {
    let m = metrics::cls_metrics(&pred, &truth, classes, Averaging::Macro).map_err(to_py)?;
    metric_dict(py, &metrics::ClsMetrics::NAMES, &m.values())
}

#[pymodule]
fn fedtrade(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", fedtrade_core::TOOL_VERSION)?;
    m.add("DivergenceError", m.py().get_type::<DivergenceError>())?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyFederation>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(make_federation, m)?)?;
    m.add_function(wrap_pyfunction!(load_federation, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(hist_match, m)?)?;
    m.add_function(wrap_pyfunction!(fda, m)?)?;
    m.add_function(wrap_pyfunction!(adain, m)?)?;
    m.add_function(wrap_pyfunction!(mixstyle, m)?)?;
    m.add_function(wrap_pyfunction!(amplified_difference, m)?)?;
    m.add_function(wrap_pyfunction!(seg_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(cls_metrics, m)?)?;
    Ok(())
}
