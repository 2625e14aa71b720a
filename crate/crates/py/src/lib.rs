//! Python module `pnr`: simulation, calibration, decoding and photon statistics.
//!
//! Tag streams cross the boundary as lists of `(channel, timestamp)` tuples with
//! timestamps in 0.1 ps ticks. Configurations are JSON strings using the same
//! schema as the command-line tool.

use std::fs::File;
use std::io::{BufReader, BufWriter};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

use pnr_core::calib::{self, CalibrationOptions, Mode};
use pnr_core::decode::{self, decode_diagnostics};
use pnr_core::photostat::{self, NumberDistribution, PoissonFitOptions};
use pnr_core::sim::{self, SimulationConfig};
use pnr_core::timetag::{self, Detector, TimeTag, DEFAULT_WINDOW_PS};
use pnr_core::Error;

create_exception!(pnr, PnrError, PyException, "Base class of analysis errors.");
create_exception!(pnr, CalibrationError, PnrError, "Calibration could not be completed.");
create_exception!(pnr, CompatibilityError, PnrError, "Inputs do not belong together.");
create_exception!(pnr, InsufficientDataError, PnrError, "Too few counts for the requested estimate.");

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        Error::InvalidParameter(_) | Error::Domain(_) => PyValueError::new_err(msg),
        Error::EmptySample(_)
        | Error::CalibrationFailure(_)
        | Error::Fit { .. }
        | Error::DegenerateOverlap { .. }
        | Error::UndetectablePhotonNumber { .. } => CalibrationError::new_err(msg),
        Error::Compatibility(_) | Error::Alignment(_) | Error::Data { .. } => CompatibilityError::new_err(msg),
        Error::InsufficientData(_) | Error::UnboundedMu | Error::UndefinedRatio(_) => InsufficientDataError::new_err(msg),
        Error::Ordering { .. } | Error::Format(_) | Error::Truncated { .. } => PnrError::new_err(msg),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(format!("invalid JSON: {e}"))
}

fn detector(name: &str) -> PyResult<Detector> {
    match name {
        "a" | "A" => Ok(Detector::A),
        "b" | "B" => Ok(Detector::B),
        _ => Err(PyValueError::new_err(format!("detector must be 'a' or 'b', got {name:?}"))),
    }
}

fn mode(name: &str) -> PyResult<Mode> {
    match name {
        "optimal" => Ok(Mode::Optimal),
        "rising_only" => Ok(Mode::RisingOnly),
        _ => Err(PyValueError::new_err(format!("mode must be 'optimal' or 'rising_only', got {name:?}"))),
    }
}

fn to_tags(tags: Vec<(u8, i64)>) -> Vec<TimeTag> {
    tags.into_iter().map(|(c, t)| TimeTag::new(c, t)).collect()
}

fn from_tags(tags: &[TimeTag]) -> Vec<(u8, i64)> {
    tags.iter().map(|t| (t.channel, t.timestamp)).collect()
}

fn open(path: &str) -> PyResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))
}

fn create(path: &str) -> PyResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))
}

/// Rise and fall threshold-crossing delays (ps) for photon numbers 1..=max_photons.
#[pyfunction]
#[pyo3(signature = (pulse_json=None))]
fn edge_delay_table(pulse_json: Option<&str>) -> PyResult<Vec<(f64, f64)>> {
    let params: sim::PulseModelParams = match pulse_json {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => sim::PulseModelParams::default(),
    };
    let table = sim::edge_delay_table(&params).map_err(to_py)?;
    Ok(table.iter().map(|d| (d.rise, d.fall)).collect())
}

/// Normalised Voigt profile.
#[pyfunction]
fn voigt_profile(x: f64, sigma: f64, gamma: f64) -> f64 {
    calib::voigt_profile(x, sigma, gamma)
}

#[pyclass(frozen, module = "pnr")]
struct Simulation {
    inner: sim::Simulation,
}

#[pymethods]
impl Simulation {
    /// Sorted `(channel, timestamp)` tags.
    #[getter]
    fn tags(&self) -> Vec<(u8, i64)> {
        from_tags(&self.inner.tags)
    }

    /// `(trigger_index, true_n_a, true_n_b)` per trigger.
    #[getter]
    fn truth(&self) -> Vec<(u64, u32, u32)> {
        self.inner.truth.iter().map(|t| (t.trigger_index, t.true_n_a, t.true_n_b)).collect()
    }

    fn write_tags(&self, path: &str) -> PyResult<u64> {
        timetag::write_stream(self.inner.tags.iter().copied(), create(path)?).map_err(to_py)
    }

    fn write_truth(&self, path: &str) -> PyResult<()> {
        sim::write_truth_csv(&self.inner.truth, create(path)?).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.truth.len()
    }
}

/// Runs the simulator. Without a configuration the documented defaults are used.
#[pyfunction]
#[pyo3(signature = (n_triggers=100_000, seed=0, config_json=None))]
fn simulate(py: Python<'_>, n_triggers: usize, seed: u64, config_json: Option<&str>) -> PyResult<Simulation> {
    let cfg = match config_json {
        Some(s) => {
            let mut c: SimulationConfig = serde_json::from_str(s).map_err(json_err)?;
            c.n_triggers = n_triggers;
            c.seed = seed;
            c
        }
        None => {
            let (pulse, jitter, source) = sim::default_params();
            let mut c = SimulationConfig::new(source, n_triggers, seed);
            c.pulse = pulse;
            c.jitter = jitter;
            c
        }
    };
    let inner = py.detach(|| sim::simulate(&cfg)).map_err(to_py)?;
    Ok(Simulation { inner })
}

#[pyfunction]
fn read_tags(path: &str) -> PyResult<Vec<(u8, i64)>> {
    let tags: Vec<TimeTag> = timetag::read_stream(open(path)?)
        .map_err(to_py)?
        .collect::<pnr_core::Result<_>>()
        .map_err(to_py)?;
    Ok(from_tags(&tags))
}

#[pyclass(frozen, skip_from_py_object, module = "pnr")]
#[derive(Clone, Copy)]
struct PhotonRecord {
    inner: decode::PhotonRecord,
}

#[pymethods]
impl PhotonRecord {
    #[new]
    #[pyo3(signature = (trigger_index, n, channel=1, trigger_time=0))]
    fn new(trigger_index: u64, n: u32, channel: u8, trigger_time: i64) -> Self {
        Self {
            inner: decode::PhotonRecord { trigger_index, trigger_time, channel, n, projected_coord: None },
        }
    }

    #[getter]
    fn trigger_index(&self) -> u64 {
        self.inner.trigger_index
    }

    #[getter]
    fn trigger_time(&self) -> i64 {
        self.inner.trigger_time
    }

    #[getter]
    fn channel(&self) -> u8 {
        self.inner.channel
    }

    #[getter]
    fn n(&self) -> u32 {
        self.inner.n
    }

    #[getter]
    fn projected_coord(&self) -> Option<f64> {
        self.inner.projected_coord
    }

    fn __repr__(&self) -> String {
        format!(
            "PhotonRecord(trigger_index={}, n={}, channel={})",
            self.inner.trigger_index, self.inner.n, self.inner.channel
        )
    }
}

fn unwrap_records(records: &[PyRef<'_, PhotonRecord>]) -> Vec<decode::PhotonRecord> {
    records.iter().map(|r| r.inner).collect()
}

fn wrap_records(records: Vec<decode::PhotonRecord>) -> Vec<PhotonRecord> {
    records.into_iter().map(|inner| PhotonRecord { inner }).collect()
}

#[pyfunction]
fn write_records(records: Vec<PyRef<'_, PhotonRecord>>, path: &str) -> PyResult<()> {
    let recs = unwrap_records(&records);
    if path.ends_with(".csv") {
        decode::write_records_csv(&recs, create(path)?).map_err(to_py)
    } else {
        decode::write_records_binary(&recs, create(path)?).map_err(to_py)
    }
}

#[pyfunction]
fn read_records(path: &str) -> PyResult<Vec<PhotonRecord>> {
    let recs = if path.ends_with(".csv") {
        decode::read_records_csv(open(path)?)
    } else {
        decode::read_records_binary(open(path)?)
    };
    recs.map(wrap_records).map_err(to_py)
}

#[pyclass(frozen, skip_from_py_object, module = "pnr")]
#[derive(Clone)]
struct CalibrationModel {
    inner: calib::CalibrationModel,
}

#[pymethods]
impl CalibrationModel {
    #[getter]
    fn detector(&self) -> &'static str {
        self.inner.detector.name()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.name()
    }

    /// Projection angle, radians.
    #[getter]
    fn angle(&self) -> f64 {
        self.inner.angle
    }

    #[getter]
    fn orientation(&self) -> f64 {
        self.inner.orientation
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    /// `(center, sigma, gamma, weight)` per photon number.
    #[getter]
    fn components(&self) -> Vec<(f64, f64, f64, f64)> {
        self.inner.components.iter().map(|c| (c.center, c.sigma, c.gamma, c.weight)).collect()
    }

    #[getter]
    fn boundaries(&self) -> Vec<f64> {
        self.inner.boundaries.clone()
    }

    #[getter]
    fn crosstalk(&self) -> Vec<Vec<f64>> {
        self.inner.crosstalk.clone()
    }

    #[getter]
    fn total_crosstalk(&self) -> f64 {
        self.inner.total_crosstalk()
    }

    fn coordinate(&self, rise: f64, fall: f64) -> f64 {
        self.inner.coordinate(&timetag::EdgeDelays { rise, fall })
    }

    fn classify(&self, coordinate: f64) -> u32 {
        self.inner.classify(coordinate)
    }

    /// Photon number per trigger of a tag stream.
    #[pyo3(signature = (tags, window_ps=DEFAULT_WINDOW_PS))]
    fn decode(&self, py: Python<'_>, tags: Vec<(u8, i64)>, window_ps: f64) -> PyResult<Vec<PhotonRecord>> {
        let tags = to_tags(tags);
        let (records, _) = py.detach(|| decode::decode_stream(&tags, &self.inner, window_ps)).map_err(to_py)?;
        Ok(wrap_records(records))
    }

    /// Records per decoded class `0..=k`.
    fn class_counts(&self, records: Vec<PyRef<'_, PhotonRecord>>) -> Vec<u64> {
        decode_diagnostics(&unwrap_records(&records), &self.inner).class_counts
    }

    /// Overall accuracy against `(trigger_index, true_n_a, true_n_b)` truth.
    fn accuracy(&self, records: Vec<PyRef<'_, PhotonRecord>>, truth: Vec<(u64, u32, u32)>) -> PyResult<f64> {
        let truth: Vec<sim::TruthRecord> = truth
            .into_iter()
            .map(|(trigger_index, true_n_a, true_n_b)| sim::TruthRecord { trigger_index, true_n_a, true_n_b })
            .collect();
        let report = decode::confusion_report(&unwrap_records(&records), &truth, &self.inner).map_err(to_py)?;
        Ok(report.overall_accuracy)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        let inner: calib::CalibrationModel = serde_json::from_str(s).map_err(json_err)?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "CalibrationModel(detector={:?}, mode={:?}, angle_deg={:.3}, k={})",
            self.detector(),
            self.mode(),
            self.inner.angle.to_degrees(),
            self.inner.k()
        )
    }
}

#[pyclass(frozen, module = "pnr")]
struct Calibration {
    inner: calib::Calibration,
}

#[pymethods]
impl Calibration {
    #[getter]
    fn optimal(&self) -> CalibrationModel {
        CalibrationModel { inner: self.inner.optimal.clone() }
    }

    #[getter]
    fn rising_only(&self) -> CalibrationModel {
        CalibrationModel { inner: self.inner.rising_only.clone() }
    }

    #[pyo3(signature = (mode_name="optimal"))]
    fn model(&self, mode_name: &str) -> PyResult<CalibrationModel> {
        Ok(CalibrationModel { inner: self.inner.model(mode(mode_name)?).clone() })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self { inner: serde_json::from_str(s).map_err(json_err)? })
    }
}

/// Calibrates one detector from a tag stream.
#[pyfunction]
#[pyo3(signature = (tags, detector_name="a", window_ps=DEFAULT_WINDOW_PS, options_json=None))]
fn calibrate(
    py: Python<'_>,
    tags: Vec<(u8, i64)>,
    detector_name: &str,
    window_ps: f64,
    options_json: Option<&str>,
) -> PyResult<Calibration> {
    let det = detector(detector_name)?;
    let opts: CalibrationOptions = match options_json {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => CalibrationOptions::default(),
    };
    let tags = to_tags(tags);
    let inner = py
        .detach(|| {
            decode::check_stream_channels(&tags, det)?;
            let pairing = timetag::pair_edges(&tags, window_ps, det)?;
            calib::calibrate(&pairing.events, det, &opts)
        })
        .map_err(to_py)?;
    Ok(Calibration { inner })
}

#[pyclass(frozen, module = "pnr")]
struct PoissonFit {
    inner: photostat::PoissonFit,
}

#[pymethods]
impl PoissonFit {
    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[getter]
    fn ci(&self) -> (f64, f64) {
        (self.inner.ci_low, self.inner.ci_high)
    }

    #[getter]
    fn method_of_moments(&self) -> f64 {
        self.inner.method_of_moments
    }

    #[getter]
    fn reduced_chi_square(&self) -> Option<f64> {
        self.inner.reduced_chi_square
    }

    /// `(label, observed, expected)` per category.
    #[getter]
    fn categories(&self) -> Vec<(String, u64, f64)> {
        self.inner.categories.iter().map(|c| (c.label.clone(), c.observed, c.expected)).collect()
    }

    fn __repr__(&self) -> String {
        format!("PoissonFit(mu={:.6}, ci=({:.6}, {:.6}))", self.inner.mu, self.inner.ci_low, self.inner.ci_high)
    }
}

/// Truncated Poisson fit of photon-number counts; the last count is `>= len - 1` when `aggregate_top`.
#[pyfunction]
#[pyo3(signature = (counts, aggregate_top=true, top_category=photostat::DEFAULT_TOP_CATEGORY, confidence=0.95))]
fn fit_poisson(counts: Vec<u64>, aggregate_top: bool, top_category: u32, confidence: f64) -> PyResult<PoissonFit> {
    let dist = NumberDistribution::new(counts, aggregate_top).map_err(to_py)?;
    let opts = PoissonFitOptions { top_category, confidence };
    let inner = photostat::fit_poisson_mu_with(&dist, &opts).map_err(to_py)?;
    Ok(PoissonFit { inner })
}

/// Photon-number histogram of decoded records with the top bin collecting `>= n_max`.
#[pyfunction]
#[pyo3(signature = (records, n_max=photostat::DEFAULT_DISPLAY_N_MAX))]
fn number_distribution(records: Vec<PyRef<'_, PhotonRecord>>, n_max: u32) -> Vec<u64> {
    NumberDistribution::from_records(&unwrap_records(&records), n_max).counts
}

#[pyclass(frozen, module = "pnr")]
struct JointDistribution {
    inner: photostat::JointDistribution,
}

#[pymethods]
impl JointDistribution {
    #[getter]
    fn counts(&self) -> Vec<Vec<u64>> {
        self.inner.counts.clone()
    }

    #[getter]
    fn n_max(&self) -> u32 {
        self.inner.n_max
    }

    #[getter]
    fn total(&self) -> u64 {
        self.inner.total()
    }

    fn get(&self, n_a: usize, n_b: usize) -> u64 {
        self.inner.get(n_a, n_b)
    }

    /// `(eta_a, eta_b, sigma_a, sigma_b)` from split-pair coincidences.
    fn efficiency(&self) -> PyResult<(f64, f64, f64, f64)> {
        let e = photostat::estimate_efficiency(&self.inner).map_err(to_py)?;
        Ok((e.eta_a, e.eta_b, e.sigma_a, e.sigma_b))
    }

    /// (1,1) suppression of this distribution relative to a split-pair reference.
    fn hom_suppression(&self, split: &JointDistribution) -> PyResult<f64> {
        Ok(photostat::hom_contrast(&self.inner, &split.inner).map_err(to_py)?.suppression_ratio)
    }
}

#[pyfunction]
#[pyo3(signature = (records_a, records_b, window_ps=DEFAULT_WINDOW_PS))]
fn jpnd(
    records_a: Vec<PyRef<'_, PhotonRecord>>,
    records_b: Vec<PyRef<'_, PhotonRecord>>,
    window_ps: f64,
) -> PyResult<JointDistribution> {
    let inner = photostat::build_jpnd(&unwrap_records(&records_a), &unwrap_records(&records_b), window_ps).map_err(to_py)?;
    Ok(JointDistribution { inner })
}

#[pymodule]
pub fn pnr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("PnrError", py.get_type::<PnrError>())?;
    m.add("CalibrationError", py.get_type::<CalibrationError>())?;
    m.add("CompatibilityError", py.get_type::<CompatibilityError>())?;
    m.add("InsufficientDataError", py.get_type::<InsufficientDataError>())?;
    m.add("DEFAULT_WINDOW_PS", DEFAULT_WINDOW_PS)?;
    m.add_class::<Simulation>()?;
    m.add_class::<PhotonRecord>()?;
    m.add_class::<CalibrationModel>()?;
    m.add_class::<Calibration>()?;
    m.add_class::<PoissonFit>()?;
    m.add_class::<JointDistribution>()?;
    m.add_function(wrap_pyfunction!(edge_delay_table, m)?)?;
    m.add_function(wrap_pyfunction!(voigt_profile, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(read_tags, m)?)?;
    m.add_function(wrap_pyfunction!(write_records, m)?)?;
    m.add_function(wrap_pyfunction!(read_records, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_poisson, m)?)?;
    m.add_function(wrap_pyfunction!(number_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(jpnd, m)?)?;
    Ok(())
}
