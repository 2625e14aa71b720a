use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timetag::{Detector, EdgeDelays, EdgeEvent};

use super::angle::{label_events, search_labelled, AngleSearch, AngleSearchOptions, AngleTrial, TrialFit};
use super::boundaries::{crosstalk_matrix, misassignment_boundaries, optimize_boundaries, total_crosstalk};
use super::histogram::{project, Histogram1D};
use super::mixture::{fit_mixture_binned, goodness_of_fit, BinResidual, MixtureOptions};
use super::voigt::VoigtComponent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    RisingOnly,
    Optimal,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::RisingOnly => "rising_only",
            Mode::Optimal => "optimal",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rising_only" => Ok(Mode::RisingOnly),
            "optimal" => Ok(Mode::Optimal),
            other => Err(format!("unknown mode '{other}', expected rising_only or optimal")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDiagnostics {
    /// Detected events used for the fit.
    pub events: usize,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: Option<f64>,
    pub chi_square: f64,
    pub dof: usize,
    pub reduced_chi_square: Option<f64>,
    /// Some adjacent pair had no density crossing; its cut minimises misassignment instead.
    pub boundary_fallback: bool,
    pub total_crosstalk: f64,
}

/// Photon-number classifier on one projection of the (rise, fall) plane.
///
/// The classification coordinate is `orientation * (rise cos angle + fall sin angle)`.
/// Component `k` describes photon number `k + 1`; the top class collects every
/// event beyond the last boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationModel {
    pub detector: Detector,
    pub mode: Mode,
    pub angle: f64,
    pub orientation: f64,
    pub components: Vec<VoigtComponent>,
    pub boundaries: Vec<f64>,
    pub crosstalk: Vec<Vec<f64>>,
    pub diagnostics: ModelDiagnostics,
}

impl CalibrationModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn coordinate(&self, d: &EdgeDelays) -> f64 {
        let (s, c) = self.angle.sin_cos();
        self.orientation * (d.rise * c + d.fall * s)
    }

    /// Photon number `1..=k` for an oriented coordinate. A value exactly on a
    /// boundary goes to the lower class.
    pub fn classify(&self, u: f64) -> u32 {
        1 + self.boundaries.partition_point(|&b| b < u) as u32
    }

    pub fn total_crosstalk(&self) -> f64 {
        total_crosstalk(&self.crosstalk)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let bad = |m: String| Err(Error::Compatibility(format!("invalid calibration model: {m}")));
        if k == 0 {
            return bad("no components".into());
        }
        if !(0.0..PI).contains(&self.angle) {
            return bad(format!("angle {} outside [0, pi)", self.angle));
        }
        if self.orientation != 1.0 && self.orientation != -1.0 {
            return bad(format!("orientation must be +1 or -1, got {}", self.orientation));
        }
        for c in &self.components {
            c.validate()?;
        }
        if self.components.windows(2).any(|w| !(w[0].center < w[1].center)) {
            return bad("components not ordered by center".into());
        }
        if self.boundaries.len() + 1 != k {
            return bad(format!("{k} components but {} boundaries", self.boundaries.len()));
        }
        if self.boundaries.iter().any(|b| !b.is_finite()) || self.boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("boundaries not strictly ascending".into());
        }
        if self.crosstalk.len() != k || self.crosstalk.iter().any(|r| r.len() != k) {
            return bad("crosstalk matrix has the wrong shape".into());
        }
        for (i, row) in self.crosstalk.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|v| !(*v >= 0.0)) {
                return bad(format!("crosstalk row {i} is not a probability vector"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationOptions {
    pub angle: AngleSearchOptions,
    pub mixture: MixtureOptions,
    /// Component count; defaults to the number of resolved peaks.
    pub components: Option<usize>,
    /// Iteration cap for the rising-edge-only fit, whose clusters overlap heavily.
    pub rising_only_max_iterations: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            angle: AngleSearchOptions::default(),
            mixture: MixtureOptions::default(),
            components: None,
            rising_only_max_iterations: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub events: usize,
    pub reference_angle: f64,
    pub components: usize,
    /// Gaussian-trial objective of the chosen angle.
    pub objective: f64,
    pub trials: Vec<AngleTrial>,
}

/// Both calibrated modes for one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub detector: Detector,
    pub optimal: CalibrationModel,
    pub rising_only: CalibrationModel,
    pub diagnostics: SearchDiagnostics,
    #[serde(skip)]
    pub optimal_residuals: Vec<BinResidual>,
    #[serde(skip)]
    pub rising_only_residuals: Vec<BinResidual>,
}

impl Calibration {
    pub fn model(&self, mode: Mode) -> &CalibrationModel {
        match mode {
            Mode::Optimal => &self.optimal,
            Mode::RisingOnly => &self.rising_only,
        }
    }
}

/// Calibrates from paired events; non-detections are ignored.
pub fn calibrate(events: &[EdgeEvent], detector: Detector, opts: &CalibrationOptions) -> Result<Calibration> {
    if let Some(e) = events.iter().find(|e| e.detector != detector) {
        return Err(Error::Compatibility(format!(
            "event for detector {} in a calibration of detector {}",
            e.detector.name(),
            detector.name()
        )));
    }
    let delays: Vec<EdgeDelays> = events.iter().filter_map(|e| e.detection).collect();
    calibrate_delays(&delays, detector, opts)
}

pub fn calibrate_delays(delays: &[EdgeDelays], detector: Detector, opts: &CalibrationOptions) -> Result<Calibration> {
    if delays.is_empty() {
        return Err(Error::EmptySample("no detected events to calibrate".into()));
    }
    let (labelled, reference_angle, grid_peaks) = label_events(delays, opts.components, &opts.angle)?;
    let k = labelled.k();
    if delays.len() < 50 * k {
        return Err(Error::InsufficientData(format!(
            "{} detected events for {k} components, need at least {}",
            delays.len(),
            50 * k
        )));
    }
    let search: AngleSearch = search_labelled(&labelled, reference_angle, &grid_peaks, &opts.angle)?;
    let best = TrialFit {
        angle: search.angle,
        orientation: search.orientation,
        components: search.components.clone(),
        boundaries: Some(search.boundaries.clone()),
        objective: search.objective,
    };
    let (optimal, optimal_residuals) = fit_mode(delays, detector, Mode::Optimal, &best, &opts.mixture, false)?;
    let rising_trial = labelled.trial(0.0, &opts.angle);
    let rising_opts = MixtureOptions {
        max_iterations: opts.rising_only_max_iterations.min(opts.mixture.max_iterations),
        ..opts.mixture
    };
    let (rising_only, rising_only_residuals) =
        fit_mode(delays, detector, Mode::RisingOnly, &rising_trial, &rising_opts, true)?;
    Ok(Calibration {
        detector,
        optimal,
        rising_only,
        diagnostics: SearchDiagnostics {
            events: delays.len(),
            reference_angle,
            components: k,
            objective: search.objective,
            trials: search.trials,
        },
        optimal_residuals,
        rising_only_residuals,
    })
}

/// Voigt fit, boundaries and crosstalk at the angle of `trial`.
fn fit_mode(
    delays: &[EdgeDelays],
    detector: Detector,
    mode: Mode,
    trial: &TrialFit,
    opts: &MixtureOptions,
    accept_unconverged: bool,
) -> Result<(CalibrationModel, Vec<BinResidual>)> {
    let coords: Vec<f64> = project(delays, trial.angle).into_iter().map(|x| trial.orientation * x).collect();
    let hist = Histogram1D::from_values(&coords, opts.bin_width)?;
    let k = trial.components.len();
    let n_params = if opts.fit_gamma { 4 * k - 1 } else { 3 * k - 1 };
    let (mut components, report) = match fit_mixture_binned(&hist, &trial.components, opts) {
        Ok(fit) => (fit.components, Some(fit.report)),
        Err(Error::Fit { best, .. }) if accept_unconverged => (best, None),
        Err(Error::Fit { reason, iterations, .. }) => {
            return Err(Error::CalibrationFailure(format!(
                "{} fit at angle {:.4} rad: {reason} ({iterations} iterations)",
                mode.name(),
                trial.angle
            )))
        }
        Err(e) => return Err(e),
    };
    components.sort_by(|a, b| a.center.total_cmp(&b.center));
    if components.windows(2).any(|w| !(w[0].center < w[1].center)) {
        return Err(Error::CalibrationFailure(format!("{} fit produced coinciding components", mode.name())));
    }
    let (boundaries, boundary_fallback) = if k == 1 {
        (Vec::new(), false)
    } else {
        match optimize_boundaries(&components) {
            Ok(b) => (b, false),
            Err(Error::DegenerateOverlap { .. }) => (misassignment_boundaries(&components)?, true),
            Err(e) => return Err(e),
        }
    };
    let crosstalk = crosstalk_matrix(&components, &boundaries)?;
    let (chi_square, dof, residuals) = goodness_of_fit(&hist, &components, n_params);
    let diagnostics = ModelDiagnostics {
        events: delays.len(),
        converged: report.as_ref().is_some_and(|r| r.converged),
        iterations: report.as_ref().map_or(opts.max_iterations, |r| r.iterations),
        log_likelihood: report.as_ref().map(|r| r.log_likelihood),
        chi_square,
        dof,
        reduced_chi_square: (dof > 0).then(|| chi_square / dof as f64),
        boundary_fallback,
        total_crosstalk: total_crosstalk(&crosstalk),
    };
    let model = CalibrationModel {
        detector,
        mode,
        angle: trial.angle,
        orientation: trial.orientation,
        components,
        boundaries,
        crosstalk,
        diagnostics,
    };
    model.validate()?;
    Ok((model, residuals))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CalibrationModel {
        let components = vec![
            VoigtComponent::new(0.0, 1.0, 0.0, 0.5).unwrap(),
            VoigtComponent::new(10.0, 1.0, 0.0, 0.3).unwrap(),
            VoigtComponent::new(20.0, 1.0, 0.0, 0.2).unwrap(),
        ];
        let boundaries = vec![5.0, 15.0];
        let crosstalk = crosstalk_matrix(&components, &boundaries).unwrap();
        CalibrationModel {
            detector: Detector::A,
            mode: Mode::Optimal,
            angle: 0.0,
            orientation: -1.0,
            components,
            boundaries,
            crosstalk,
            diagnostics: ModelDiagnostics {
                events: 0,
                converged: true,
                iterations: 0,
                log_likelihood: None,
                chi_square: 0.0,
                dof: 0,
                reduced_chi_square: None,
                boundary_fallback: false,
                total_crosstalk: 0.0,
            },
        }
    }

    #[test]
    fn classification_and_ties() {
        let m = model();
        assert_eq!(m.classify(-100.0), 1);
        assert_eq!(m.classify(5.0), 1);
        assert_eq!(m.classify(5.0 + 1e-12), 2);
        assert_eq!(m.classify(15.0), 2);
        assert_eq!(m.classify(1e9), 3);
        assert_eq!(m.coordinate(&EdgeDelays { rise: 7.0, fall: 100.0 }), -7.0);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let m = model();
        m.validate().unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: CalibrationModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(text.contains("\"mode\":\"optimal\""));
        let mut bad = m.clone();
        bad.boundaries = vec![15.0, 5.0];
        assert!(bad.validate().is_err());
        let mut bad = m;
        bad.crosstalk[0][0] += 0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mode_names() {
        assert_eq!("rising_only".parse::<Mode>().unwrap(), Mode::RisingOnly);
        assert!("both".parse::<Mode>().is_err());
        assert_eq!(serde_json::to_string(&Mode::RisingOnly).unwrap(), "\"rising_only\"");
    }
}
