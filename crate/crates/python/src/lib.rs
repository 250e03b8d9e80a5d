use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

use srs_sense::csi::CsiRecording;
use srs_sense::dataset::{load_dataset, save_sample};
use srs_sense::movement::{self, ClassifierSample, EnergyConfig, MovementClass, SampleGeometry};
use srs_sense::nn::{self, GroupBy, ModelParams, TrainConfig};
use srs_sense::resp::{self, BandConfig};
use srs_sense::sim::{self, SimulationConfig};
use srs_sense::trace::{load_trace, save_trace};
use srs_sense::Error;

create_exception!(srs_sense_py, SrsSenseError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Validation { .. } | Error::ShapeMismatch { .. } | Error::Json(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        other => SrsSenseError::new_err(other.to_string()),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| to_py(e.into()))
}

fn class_from_name(name: &str) -> PyResult<MovementClass> {
    name.parse().map_err(to_py)
}

/// Complex CSI tensor `[antenna, subcarrier, frame]`.
#[pyclass(frozen, name = "Recording")]
struct PyRecording {
    inner: CsiRecording,
}

#[pymethods]
impl PyRecording {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_trace(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_trace(&self.inner, &path).map_err(to_py)
    }

    /// `(antennas, subcarriers, frames)`
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.inner.data().dim()
    }

    #[getter]
    fn frame_interval(&self) -> f64 {
        self.inner.frame_interval()
    }

    #[getter]
    fn carrier_hz(&self) -> f64 {
        self.inner.carrier_hz()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration()
    }

    /// `|H|` of one antenna and subcarrier over all frames.
    fn amplitude(&self, antenna: usize, subcarrier: usize) -> PyResult<Vec<f64>> {
        let (a, k, _) = self.inner.data().dim();
        if antenna >= a || subcarrier >= k {
            return Err(PyValueError::new_err(format!(
                "index ({antenna}, {subcarrier}) outside ({a}, {k})"
            )));
        }
        Ok(self
            .inner
            .data()
            .slice(ndarray::s![antenna, subcarrier, ..])
            .iter()
            .map(|z| z.norm())
            .collect())
    }

    fn __repr__(&self) -> String {
        let (a, k, t) = self.inner.data().dim();
        format!("Recording(antennas={a}, subcarriers={k}, frames={t}, frame_interval={})", self.inner.frame_interval())
    }
}

#[pyclass(frozen, name = "RespirationEstimate")]
struct PyEstimate {
    inner: resp::RespirationEstimate,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn rate_bpm(&self) -> f64 {
        self.inner.rate_bpm
    }

    #[getter]
    fn chosen_modality(&self) -> String {
        self.inner.chosen_modality.to_string()
    }

    #[getter]
    fn q_amplitude(&self) -> f64 {
        self.inner.amplitude.q_spec
    }

    #[getter]
    fn q_phase(&self) -> f64 {
        self.inner.phase.q_spec
    }

    #[getter]
    fn antenna(&self) -> usize {
        self.inner.signals.antenna
    }

    #[getter]
    fn subcarrier(&self) -> usize {
        self.inner.signals.subcarrier
    }

    #[getter]
    fn window(&self) -> (f64, f64) {
        self.inner.window
    }

    /// Filtered amplitude series of the selected subcarrier.
    #[getter]
    fn x_a(&self) -> Vec<f64> {
        self.inner.signals.x_a.clone()
    }

    /// Filtered phase series of the selected subcarrier.
    #[getter]
    fn x_p(&self) -> Vec<f64> {
        self.inner.signals.x_p.clone()
    }

    /// Same JSON object `estimate` prints.
    fn to_json(&self) -> PyResult<String> {
        to_json(&self.inner.record())
    }

    fn __repr__(&self) -> String {
        format!(
            "RespirationEstimate(rate_bpm={:.2}, modality={})",
            self.inner.rate_bpm, self.inner.chosen_modality
        )
    }
}

#[pyclass(frozen, name = "MovementEvent")]
struct PyEvent {
    inner: movement::MovementEvent,
}

#[pymethods]
impl PyEvent {
    #[new]
    #[pyo3(signature = (start, end, label=None))]
    fn new(start: f64, end: f64, label: Option<&str>) -> PyResult<Self> {
        Ok(Self {
            inner: movement::MovementEvent {
                interval: [start, end],
                peak_energy: 0.0,
                mean_energy: 0.0,
                label: label.map(class_from_name).transpose()?,
            },
        })
    }

    #[getter]
    fn interval(&self) -> (f64, f64) {
        (self.inner.interval[0], self.inner.interval[1])
    }

    #[getter]
    fn peak_energy(&self) -> f64 {
        self.inner.peak_energy
    }

    #[getter]
    fn mean_energy(&self) -> f64 {
        self.inner.mean_energy
    }

    #[getter]
    fn label(&self) -> Option<&'static str> {
        self.inner.label.map(MovementClass::name)
    }

    fn __repr__(&self) -> String {
        let [a, b] = self.inner.interval;
        format!("MovementEvent({a:.2}, {b:.2}, label={:?})", self.label())
    }
}

/// Pooled, z-scored amplitude image fed to the classifier.
#[pyclass(frozen, name = "Sample")]
struct PySample {
    inner: ClassifierSample,
}

#[pymethods]
impl PySample {
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.inner.tensor.dim()
    }

    #[getter]
    fn label(&self) -> Option<&'static str> {
        self.inner.label.map(MovementClass::name)
    }

    /// Row-major `float32` values as a flat list.
    fn values(&self) -> Vec<f32> {
        self.inner.tensor.iter().copied().collect()
    }

    /// Write the dataset sample file (shape header, then `f32` values).
    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_sample(&self.inner.tensor, &path).map_err(to_py)
    }
}

#[pyclass(frozen, name = "Model")]
struct PyModel {
    inner: ModelParams,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ModelParams::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize, usize) {
        let a = self.inner.architecture();
        (a.channels, a.height, a.width)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.values().len()
    }

    /// Class probabilities in the order `classes()` returns.
    fn probabilities(&self, sample: &PySample) -> PyResult<Vec<f64>> {
        nn::forward(&self.inner, &sample.inner).map_err(to_py)
    }

    fn predict(&self, sample: &PySample) -> PyResult<&'static str> {
        nn::predict(&self.inner, &sample.inner).map(MovementClass::name).map_err(to_py)
    }
}

/// Movement class names in output order.
#[pyfunction]
fn classes() -> Vec<&'static str> {
    MovementClass::ALL.iter().map(|c| c.name()).collect()
}

/// Synthesise a recording from a JSON config. Returns the recording and the
/// ground truth as JSON.
#[pyfunction]
#[pyo3(signature = (config_json=None, seed=None))]
fn simulate(py: Python<'_>, config_json: Option<&str>, seed: Option<u64>) -> PyResult<(PyRecording, String)> {
    let mut config: SimulationConfig = match config_json {
        Some(text) => serde_json::from_str(text).map_err(|e| to_py(e.into()))?,
        None => SimulationConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let (rec, truth) = py.detach(|| sim::simulate(&config)).map_err(to_py)?;
    Ok((PyRecording { inner: rec }, to_json(&truth)?))
}

/// Respiration rate over `window` (whole recording by default).
#[pyfunction]
#[pyo3(signature = (recording, window=None, band=(0.1, 0.5)))]
fn estimate_respiration(
    py: Python<'_>,
    recording: &PyRecording,
    window: Option<(f64, f64)>,
    band: (f64, f64),
) -> PyResult<PyEstimate> {
    let rec = &recording.inner;
    let band = BandConfig::new(band.0, band.1, 1.0 / rec.frame_interval()).map_err(to_py)?;
    let window = window.unwrap_or((0.0, rec.duration()));
    let inner = py
        .detach(|| resp::estimate_respiration(rec, window, &band))
        .map_err(to_py)?;
    Ok(PyEstimate { inner })
}

#[pyfunction]
#[pyo3(signature = (recording, baseline, window_w=25, threshold_k=3.0, min_event_s=0.4, merge_gap_s=0.3))]
fn detect_movements(
    recording: &PyRecording,
    baseline: (f64, f64),
    window_w: usize,
    threshold_k: f64,
    min_event_s: f64,
    merge_gap_s: f64,
) -> PyResult<Vec<PyEvent>> {
    let config = EnergyConfig {
        window_w,
        threshold_k,
        min_event_s,
        merge_gap_s,
    };
    let events = movement::detect_movements(&recording.inner, &config, baseline).map_err(to_py)?;
    Ok(events.into_iter().map(|inner| PyEvent { inner }).collect())
}

#[pyfunction]
#[pyo3(signature = (recording, event, freq_bins=64, time_steps=128))]
fn make_sample(recording: &PyRecording, event: &PyEvent, freq_bins: usize, time_steps: usize) -> PyResult<PySample> {
    let geometry = SampleGeometry { freq_bins, time_steps };
    let inner = movement::make_sample(&recording.inner, &event.inner, &geometry).map_err(to_py)?;
    Ok(PySample { inner })
}

/// Train on a dataset directory. With `test_dataset` the whole first set is
/// used for training; otherwise it is split by the config's `test_fraction`.
/// Returns the model and the training report as JSON.
#[pyfunction]
#[pyo3(signature = (dataset, config_json=None, seed=None, test_dataset=None))]
fn train(
    py: Python<'_>,
    dataset: PathBuf,
    config_json: Option<&str>,
    seed: Option<u64>,
    test_dataset: Option<PathBuf>,
) -> PyResult<(PyModel, String)> {
    let mut config: TrainConfig = match config_json {
        Some(text) => serde_json::from_str(text).map_err(|e| to_py(e.into()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let samples = |dir: &PathBuf| -> PyResult<Vec<ClassifierSample>> {
        Ok(load_dataset(dir).map_err(to_py)?.into_iter().map(|(_, s)| s).collect())
    };
    let all = samples(&dataset)?;
    let (train_set, test_set) = match test_dataset {
        Some(dir) => (all, samples(&dir)?),
        None => {
            let (tr, te) = nn::stratified_split(&all, config.test_fraction, config.seed);
            (
                tr.iter().map(|&i| all[i].clone()).collect(),
                te.iter().map(|&i| all[i].clone()).collect(),
            )
        }
    };
    let (params, report) = py
        .detach(|| nn::train(&train_set, (!test_set.is_empty()).then_some(&test_set[..]), &config))
        .map_err(to_py)?;
    Ok((PyModel { inner: params }, to_json(&report)?))
}

/// Accuracy report (JSON) of `model` on a dataset directory.
#[pyfunction]
#[pyo3(signature = (model, dataset, group_by=None))]
fn evaluate(py: Python<'_>, model: &PyModel, dataset: PathBuf, group_by: Option<&str>) -> PyResult<String> {
    let group_by: Option<GroupBy> = group_by.map(str::parse).transpose().map_err(to_py)?;
    let samples: Vec<ClassifierSample> = load_dataset(&dataset)
        .map_err(to_py)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let report = py
        .detach(|| nn::evaluate(&model.inner, &samples, group_by))
        .map_err(to_py)?;
    to_json(&report)
}

#[pymodule]
fn srs_sense_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SrsSenseError", m.py().get_type::<SrsSenseError>())?;
    m.add_class::<PyRecording>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyEvent>()?;
    m.add_class::<PySample>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(classes, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_respiration, m)?)?;
    m.add_function(wrap_pyfunction!(detect_movements, m)?)?;
    m.add_function(wrap_pyfunction!(make_sample, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
