//! Python bindings for the `ithp` crate.

use std::path::PathBuf;

use ithp::domain::{make_grid, split_dataset};
use ithp::eval::{influence_heatmap, lag_grid, recover_kernel, test_tll, type_accuracy, DEFAULT_PROBES};
use ithp::io::{load_dataset, load_model, save_dataset, save_model};
use ithp::model::{attention_matrix, intensity_all_types, PointKind};
use ithp::simulator::{simulate_dataset, HawkesSpec};
use ithp::trainer::{compensator, log_likelihood, train_observed, TrainConfig};
use ithp::{Event, ModelConfig, ModelParams, Split};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!("unknown split {other:?}"))),
    }
}

fn parse_variant(name: &str) -> PyResult<ithp::Variant> {
    match name {
        "ithp" => Ok(ithp::Variant::Ithp),
        "ex-ithp" | "ex_ithp" => Ok(ithp::Variant::ExIthp),
        other => Err(PyValueError::new_err(format!("unknown variant {other:?}"))),
    }
}

/// A single sequence of typed events on `(0, horizon]`.
#[pyclass(name = "EventSequence", module = "pyithp", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySequence {
    inner: ithp::EventSequence,
}

#[pymethods]
impl PySequence {
    #[new]
    fn new(times: Vec<f64>, types: Vec<usize>, horizon: f64, num_types: usize) -> PyResult<Self> {
        if times.len() != types.len() {
            return Err(PyValueError::new_err("times and types differ in length"));
        }
        let events = times.into_iter().zip(types).map(|(t, k)| Event::new(t, k)).collect();
        let inner = ithp::EventSequence::new(events, horizon, num_types).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times().collect()
    }

    #[getter]
    fn types(&self) -> Vec<usize> {
        self.inner.events().iter().map(|e| e.k).collect()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    #[getter]
    fn num_types(&self) -> usize {
        self.inner.num_types()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "EventSequence(len={}, horizon={}, num_types={})",
            self.inner.len(),
            self.inner.horizon(),
            self.inner.num_types()
        )
    }
}

/// Sequences labelled train, val or test.
#[pyclass(name = "Dataset", module = "pyithp", frozen)]
struct PyDataset {
    inner: ithp::Dataset,
}

#[pymethods]
impl PyDataset {
    /// A directory holding `train.jsonl`, `val.jsonl` and `test.jsonl`, or one file.
    #[staticmethod]
    #[pyo3(signature = (path, time_scale=None))]
    fn load(path: PathBuf, time_scale: Option<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: load_dataset(&path, time_scale).map_err(value_err)?,
        })
    }

    /// Simulates one of the two reference processes and splits the result.
    #[staticmethod]
    #[pyo3(signature = (kernel="exp", num_seqs=100, horizon=20.0, seed=0, split=(0.5, 0.25, 0.25)))]
    fn simulate(kernel: &str, num_seqs: usize, horizon: f64, seed: u64, split: (f64, f64, f64)) -> PyResult<Self> {
        let spec = match kernel {
            "exp" => HawkesSpec::reference_exponential(),
            "half-sine" | "half_sine" => HawkesSpec::reference_half_sine(),
            other => return Err(PyValueError::new_err(format!("unknown kernel {other:?}"))),
        };
        let raw = simulate_dataset(&spec, horizon, num_seqs, seed).map_err(value_err)?;
        Ok(Self {
            inner: split_dataset(&raw, split, seed).map_err(value_err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        save_dataset(&dir, &self.inner).map_err(value_err)?;
        Ok(())
    }

    fn split(&self, name: &str) -> PyResult<Vec<PySequence>> {
        Ok(self
            .inner
            .split(parse_split(name)?)
            .into_iter()
            .map(|s| PySequence { inner: s.clone() })
            .collect())
    }

    #[getter]
    fn num_types(&self) -> usize {
        self.inner.num_types()
    }

    #[getter]
    fn total_events(&self) -> usize {
        self.inner.total_events()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

type AttentionRows = (Vec<f64>, Vec<bool>, Vec<Vec<f64>>);

/// A configuration with its parameters.
#[pyclass(name = "Model", module = "pyithp", frozen)]
struct PyModel {
    cfg: ModelConfig,
    params: ModelParams,
}

impl PyModel {
    fn seqs<'a>(&self, data: &'a PyDataset, split: &str) -> PyResult<Vec<&'a ithp::EventSequence>> {
        let seqs = data.inner.split(parse_split(split)?);
        if data.inner.num_types() != self.cfg.num_types {
            return Err(PyValueError::new_err("dataset and model disagree on the number of types"));
        }
        Ok(seqs)
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (cfg, params) = load_model(&path).map_err(value_err)?;
        Ok(Self { cfg, params })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&path, &self.cfg, &self.params).map_err(value_err)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        match self.cfg.variant {
            ithp::Variant::Ithp => "ithp",
            ithp::Variant::ExIthp => "ex-ithp",
        }
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    #[getter]
    fn num_types(&self) -> usize {
        self.cfg.num_types
    }

    /// Tensor name to `(shape, row-major values)`.
    fn parameters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let out = PyDict::new(py);
        for (name, shape, data) in self.params.tensors() {
            out.set_item(name, (shape, data.to_vec()))?;
        }
        Ok(out)
    }

    /// All `K` intensities at time `t`, attending to events strictly before `t`.
    fn intensity(&self, seq: &PySequence, t: f64) -> PyResult<Vec<f64>> {
        intensity_all_types(&self.params, &self.cfg, &seq.inner, t).map_err(value_err)
    }

    #[pyo3(signature = (seq, subdivision=10))]
    fn log_likelihood(&self, seq: &PySequence, subdivision: usize) -> PyResult<f64> {
        let grid = make_grid(&seq.inner, subdivision).map_err(value_err)?;
        log_likelihood(&self.params, &self.cfg, &seq.inner, &grid).map_err(value_err)
    }

    #[pyo3(signature = (seq, subdivision=10))]
    fn compensator(&self, seq: &PySequence, subdivision: usize) -> PyResult<f64> {
        let grid = make_grid(&seq.inner, subdivision).map_err(value_err)?;
        compensator(&self.params, &self.cfg, &seq.inner, &grid).map_err(value_err)
    }

    /// Per-event log-likelihood on a split.
    #[pyo3(signature = (data, split="test", subdivision=10))]
    fn test_tll(&self, data: &PyDataset, split: &str, subdivision: usize) -> PyResult<f64> {
        test_tll(&self.params, &self.cfg, &self.seqs(data, split)?, subdivision).map_err(value_err)
    }

    #[pyo3(signature = (data, split="test"))]
    fn type_accuracy(&self, data: &PyDataset, split: &str) -> PyResult<f64> {
        type_accuracy(&self.params, &self.cfg, &self.seqs(data, split)?).map_err(value_err)
    }

    /// Mean learned kernel `phi_{target,source}` at lags `taus`.
    #[pyo3(signature = (data, source, target, taus, split="test", probes=DEFAULT_PROBES))]
    fn recover_kernel(
        &self,
        data: &PyDataset,
        source: usize,
        target: usize,
        taus: Vec<f64>,
        split: &str,
        probes: usize,
    ) -> PyResult<Vec<f64>> {
        let seqs = self.seqs(data, split)?;
        let est = recover_kernel(&self.params, &self.cfg, &seqs, source, target, &taus, probes).map_err(value_err)?;
        Ok(est.phi_hat)
    }

    /// `values[target][source]`: integral of the recovered kernel over `(0, tau_max]`.
    #[pyo3(signature = (data, tau_max=1.0, steps=20, split="test", probes=DEFAULT_PROBES))]
    fn heatmap(
        &self,
        data: &PyDataset,
        tau_max: f64,
        steps: usize,
        split: &str,
        probes: usize,
    ) -> PyResult<Vec<Vec<f64>>> {
        lag_grid(tau_max, steps).map_err(value_err)?;
        let seqs = self.seqs(data, split)?;
        let h = influence_heatmap(&self.params, &self.cfg, &seqs, tau_max, steps, probes).map_err(value_err)?;
        Ok(h.values)
    }

    /// `(times, is_event, weights)` over events and grid points in time order.
    #[pyo3(signature = (seq, subdivision=10, grid_query_type=0))]
    fn attention(
        &self,
        seq: &PySequence,
        subdivision: usize,
        grid_query_type: usize,
    ) -> PyResult<AttentionRows> {
        let grid = make_grid(&seq.inner, subdivision).map_err(value_err)?;
        let a = attention_matrix(&self.params, &self.cfg, &seq.inner, &grid, grid_query_type).map_err(value_err)?;
        let rows = (0..a.times.len()).map(|r| a.weights.row(r).to_vec()).collect();
        let is_event = a.kinds.iter().map(|k| matches!(k, PointKind::Event(_))).collect();
        Ok((a.times, is_event, rows))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(variant={:?}, embed_dim={}, num_types={})",
            self.variant(),
            self.cfg.embed_dim,
            self.cfg.num_types
        )
    }
}

/// Trains a model and returns it with one dict per epoch.
#[pyfunction]
#[pyo3(signature = (
    data, embed_dim=32, variant="ithp", learning_rate=1e-3, epochs=100, batch_size=16,
    patience=10, subdivision=10, seed=0, skip_connection=false
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    data: &PyDataset,
    embed_dim: usize,
    variant: &str,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    patience: usize,
    subdivision: usize,
    seed: u64,
    skip_connection: bool,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let mut cfg = ModelConfig::new(embed_dim, data.inner.num_types(), parse_variant(variant)?);
    cfg.grid_subdivision = subdivision;
    cfg.skip_connection = skip_connection;
    let tc = TrainConfig {
        learning_rate,
        max_epochs: epochs,
        batch_size,
        patience,
        grid_subdivision: subdivision,
        seed,
        ..TrainConfig::default()
    };
    let mut records = Vec::new();
    let (params, _) = py
        .detach(|| train_observed(&data.inner, &cfg, &tc, |r| records.push(r.clone())))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let log = records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("train_objective", r.train_objective)?;
            d.set_item("val_tll", r.val_tll)?;
            d.set_item("seconds", r.seconds)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyModel { cfg, params }, log))
}

#[pymodule]
fn pyithp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
