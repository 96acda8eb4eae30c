//! Python bindings: configuration, demonstrations, training, inference and scoring.

use std::path::PathBuf;

use bilateral_il::dataset::{self, channel_names};
use bilateral_il::eval::{self, RunOptions};
use bilateral_il::models::{self, ModelKind};
use bilateral_il::signal;
use bilateral_il::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn nine(v: Vec<f64>) -> PyResult<[f64; 9]> {
    v.try_into().map_err(|v: Vec<f64>| PyValueError::new_err(format!("expected 9 values, got {}", v.len())))
}

/// Full configuration; defaults are the paper profile.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: bilateral_il::Config,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (profile = "paper"))]
    fn new(profile: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: bilateral_il::Config::profile(profile).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: bilateral_il::Config::from_toml(text).map_err(to_py)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn profile(&self) -> String {
        self.inner.profile.clone()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.model.epochs
    }

    #[setter]
    fn set_epochs(&mut self, epochs: usize) -> PyResult<()> {
        let mut c = self.inner.clone();
        c.model.epochs = epochs;
        c.validate().map_err(to_py)?;
        self.inner = c;
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.model.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.model.seed = seed;
    }
}

/// A recorded master/slave trial.
#[pyclass(name = "Trial", from_py_object)]
#[derive(Clone)]
struct PyTrial {
    inner: dataset::Trial,
}

#[pymethods]
impl PyTrial {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrial { inner: dataset::Trial::load(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn trial_id(&self) -> String {
        self.inner.meta.trial_id.clone()
    }

    #[getter]
    fn height_mm(&self) -> f64 {
        self.inner.meta.height_mm
    }

    #[getter]
    fn period_ms(&self) -> f64 {
        self.inner.meta.period_ms
    }

    /// Samples of a named channel such as `"s_th1"`.
    fn channel(&self, name: &str) -> PyResult<Vec<f64>> {
        let ch = channel_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown channel {name:?}")))?;
        Ok(self.inner.channel(ch))
    }

    fn resample(&self, period_ms: f64) -> PyResult<Self> {
        Ok(PyTrial { inner: dataset::resample_trial(&self.inner, period_ms).map_err(to_py)? })
    }

    /// Letter score of the slave's pen trace.
    fn score(&self, config: &PyConfig) -> PyResult<f64> {
        let c = &config.inner;
        eval::letter_score(&eval::render_trial(&self.inner, c), &eval::template(c), c.eval.shift_mm).map_err(to_py)
    }
}

/// The resampled training set.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn collect(config: &PyConfig) -> PyResult<Self> {
        let (inner, _) = dataset::build_dataset(&config.inner, |_| Ok(())).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyDataset { inner: dataset::Dataset::load(&dir).map_err(to_py)? })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn trial(&self, index: usize) -> PyResult<PyTrial> {
        self.inner
            .trials
            .get(index)
            .map(|t| PyTrial { inner: t.clone() })
            .ok_or_else(|| PyValueError::new_err("trial index out of range"))
    }

    /// Share of a channel's spectral energy below `omega` rad/s.
    fn energy_below(&self, channel: usize, omega: f64) -> PyResult<f64> {
        self.inner.energy_below(channel, omega).map_err(to_py)
    }
}

/// A trained CONV, MD or PLT model.
#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: models::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: models::Model::load(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.spec.kind.name()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }
}

/// Stateful one-step inference at the fast rate.
#[pyclass(name = "Predictor")]
struct PyPredictor {
    inner: models::Predictor<'static>,
}

#[pymethods]
impl PyPredictor {
    #[new]
    fn new(model: &PyModel) -> Self {
        PyPredictor { inner: models::Predictor::owned(model.inner.clone()) }
    }

    /// Slave `(th, th', tau)` in, predicted master nine-vector out.
    fn step(&mut self, slave: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.step(&nine(slave)?).map_err(to_py)?.master.to_vec())
    }

    #[getter]
    fn tick(&self) -> u64 {
        self.inner.tick()
    }
}

#[pyfunction]
fn design_lpf_cutoff(st_d: f64) -> PyResult<f64> {
    signal::design_lpf_cutoff(st_d).map_err(to_py)
}

/// One scripted demonstration at 1 ms plus its fidelity statistics.
#[pyfunction]
#[pyo3(signature = (config, height_mm, seed, trial_id = "demo"))]
fn run_demonstration<'py>(py: Python<'py>, config: &PyConfig, height_mm: f64, seed: u64, trial_id: &str) -> PyResult<(PyTrial, Bound<'py, PyDict>)> {
    let d = dataset::run_demonstration(&config.inner, height_mm, seed, trial_id).map_err(to_py)?;
    let f = PyDict::new(py);
    f.set_item("tracking_rad", d.fidelity.tracking_rad)?;
    f.set_item("action_reaction", d.fidelity.action_reaction)?;
    f.set_item("contact_ticks", d.fidelity.contact_ticks)?;
    f.set_item("pressure_tau2", d.fidelity.pressure_tau2)?;
    Ok((PyTrial { inner: d.trial }, f))
}

#[pyfunction]
fn train(kind: &str, dataset: &PyDataset, config: &PyConfig) -> PyResult<PyModel> {
    let kind: ModelKind = kind.parse().map_err(to_py)?;
    let inner = models::train(kind, &dataset.inner, &config.inner, |_, _, _| {}).map_err(to_py)?;
    Ok(PyModel { inner })
}

/// Autonomous writing with a learned model; returns score and logs.
#[pyfunction]
#[pyo3(signature = (model, config, height_mm, duration_s = None, seed = 1))]
fn run_autonomous<'py>(py: Python<'py>, model: &PyModel, config: &PyConfig, height_mm: f64, duration_s: Option<f64>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let c = &config.inner;
    let duration = duration_s.unwrap_or(c.eval.duration_s);
    let mut p = models::Predictor::new(&model.inner);
    let run = eval::run_autonomous(c, &mut p, RunOptions::new(height_mm, duration, seed)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("score", eval::score_run(&run, c).map_err(to_py)?)?;
    out.set_item("network_ticks", run.network_ticks())?;
    out.set_item("contact_ticks", run.contact_ticks())?;
    out.set_item("envelope_excess", run.envelope_excess(&model.inner))?;
    out.set_item("predicted", run.predicted.iter().map(|r| r.to_vec()).collect::<Vec<_>>())?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (model, config, h_before, h_after, seed = 1))]
fn height_step_test<'py>(py: Python<'py>, model: &PyModel, config: &PyConfig, h_before: f64, h_after: f64, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let s = eval::height_step_test(&model.inner, &config.inner, h_before, h_after, seed).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("theta2_change", s.theta2_change)?;
    out.set_item("tau2_change", s.tau2_change)?;
    out.set_item("switch_s", s.switch_s)?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "bilateral_il")]
fn bilateral_il_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", bilateral_il::VERSION)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrial>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPredictor>()?;
    m.add_function(wrap_pyfunction!(design_lpf_cutoff, m)?)?;
    m.add_function(wrap_pyfunction!(run_demonstration, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_autonomous, m)?)?;
    m.add_function(wrap_pyfunction!(height_step_test, m)?)?;
    Ok(())
}
