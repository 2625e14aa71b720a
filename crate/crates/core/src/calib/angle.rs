//! Search for the projection angle that minimises total crosstalk.
//!
//! The coordinate `rise cos a + fall sin a` is multiplied by an orientation
//! sign so that the one-photon cluster (largest mean rise delay) always has
//! the smallest oriented coordinate. Angles cover `[0, pi)`; `a + pi` is the
//! same projection with the opposite sign.
//!
//! Every trial angle is scored with a Gaussian mixture fitted by closed-form
//! EM. Trial fits are initialised by label transfer: events are labelled once
//! at a reference angle and each label's projected mean, spread and share seed
//! the fit at the trial angle.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::golden_section_min;
use crate::timetag::EdgeDelays;

use super::boundaries::{crosstalk_matrix, optimize_boundaries, total_crosstalk};
use super::histogram::{project, Histogram1D};
use super::mixture::{fit_gaussian_mixture, GaussianComponent, DEFAULT_BIN_WIDTH_PS};
use super::peaks::{find_peaks_detailed, DEFAULT_MIN_PROMINENCE, DEFAULT_SMOOTHING_BINS};
use super::voigt::VoigtComponent;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AngleSearchOptions {
    /// Coarse grid size over `[0, pi)`; even so that 0 and pi/2 are both on it.
    pub grid_points: usize,
    /// Golden-section refinement stops at this bracket width, degrees.
    pub refine_tolerance_deg: f64,
    pub bin_width: f64,
    pub smoothing_bins: f64,
    pub min_prominence: f64,
    pub gaussian_iterations: usize,
}

impl Default for AngleSearchOptions {
    fn default() -> Self {
        Self {
            grid_points: 24,
            refine_tolerance_deg: 0.05,
            bin_width: DEFAULT_BIN_WIDTH_PS,
            smoothing_bins: DEFAULT_SMOOTHING_BINS,
            min_prominence: DEFAULT_MIN_PROMINENCE,
            gaussian_iterations: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleTrial {
    pub angle: f64,
    pub orientation: f64,
    /// Total off-diagonal crosstalk; `k` marks a degenerate trial.
    pub objective: f64,
    pub peaks: Option<usize>,
}

/// Gaussian trial fit at one angle, in oriented coordinates, sorted by center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFit {
    pub angle: f64,
    pub orientation: f64,
    pub components: Vec<VoigtComponent>,
    pub boundaries: Option<Vec<f64>>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSearch {
    pub angle: f64,
    pub orientation: f64,
    pub objective: f64,
    pub components: Vec<VoigtComponent>,
    pub boundaries: Vec<f64>,
    pub reference_angle: f64,
    pub k: usize,
    /// Every evaluated angle in evaluation order.
    pub trials: Vec<AngleTrial>,
}

impl AngleSearch {
    /// Objective of the first trial at `angle` (grid points are exact).
    pub fn objective_at(&self, angle: f64) -> Option<f64> {
        self.trials.iter().find(|t| (t.angle - angle).abs() < 1e-12).map(|t| t.objective)
    }
}

/// Events labelled by photon-number class (0 = one photon).
pub(crate) struct Labelled<'a> {
    delays: &'a [EdgeDelays],
    labels: Vec<usize>,
    k: usize,
}

impl<'a> Labelled<'a> {
    pub(crate) fn k(&self) -> usize {
        self.k
    }

    /// Labels events by a Gaussian fit at `angle` started from `peaks`.
    fn from_reference(delays: &'a [EdgeDelays], angle: f64, peaks: &[f64], opts: &AngleSearchOptions) -> Result<Self> {
        let k = peaks.len();
        let coords = project(delays, angle);
        let hist = Histogram1D::from_values(&coords, opts.bin_width)?;
        let init: Vec<GaussianComponent> = peaks
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let mut gap = f64::INFINITY;
                if i > 0 {
                    gap = gap.min(p - peaks[i - 1]);
                }
                if i + 1 < k {
                    gap = gap.min(peaks[i + 1] - p);
                }
                let sd = if gap.is_finite() { gap / 4.0 } else { 5.0 * opts.bin_width };
                GaussianComponent { mean: p, sd: sd.max(opts.bin_width), weight: 1.0 / k as f64 }
            })
            .collect();
        let fit = fit_gaussian_mixture(&hist, &init, opts.gaussian_iterations)?;
        let comps = fit.components;
        let raw: Vec<usize> = coords
            .iter()
            .map(|&x| {
                (0..k)
                    .max_by(|&a, &b| {
                        let la = comps[a].weight.ln() + log_pdf(&comps[a], x);
                        let lb = comps[b].weight.ln() + log_pdf(&comps[b], x);
                        la.total_cmp(&lb)
                    })
                    .unwrap_or(0)
            })
            .collect();
        // order classes by mean rise delay, largest first
        let mut rise_sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (d, &l) in delays.iter().zip(&raw) {
            rise_sum[l] += d.rise;
            count[l] += 1;
        }
        if let Some(empty) = count.iter().position(|&c| c == 0) {
            return Err(Error::CalibrationFailure(format!(
                "reference cluster {empty} at angle {angle:.4} received no events"
            )));
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| (rise_sum[b] / count[b] as f64).total_cmp(&(rise_sum[a] / count[a] as f64)));
        let mut rank = vec![0; k];
        for (r, &c) in order.iter().enumerate() {
            rank[c] = r;
        }
        Ok(Self { delays, labels: raw.iter().map(|&l| rank[l]).collect(), k })
    }

    /// Per-class projected mean, spread and share at `angle`.
    fn moments(&self, coords: &[f64]) -> Vec<GaussianComponent> {
        let mut acc = vec![(0.0f64, 0.0f64, 0.0f64); self.k];
        for (&x, &l) in coords.iter().zip(&self.labels) {
            acc[l].0 += 1.0;
            acc[l].1 += x;
            acc[l].2 += x * x;
        }
        let n = coords.len() as f64;
        acc.iter()
            .map(|&(c, s, ss)| {
                let mean = s / c;
                GaussianComponent { mean, sd: (ss / c - mean * mean).max(0.0).sqrt(), weight: c / n }
            })
            .collect()
    }

    /// Gaussian fit and objective at `angle` (any real; reduced to `[0, pi)`).
    pub(crate) fn trial(&self, angle: f64, opts: &AngleSearchOptions) -> TrialFit {
        let angle = angle.rem_euclid(PI);
        let coords = project(self.delays, angle);
        let init = self.moments(&coords);
        let orientation = if init[self.k - 1].mean >= init[0].mean { 1.0 } else { -1.0 };
        let worst = |components: Vec<VoigtComponent>| TrialFit {
            angle,
            orientation,
            components,
            boundaries: None,
            objective: self.k as f64,
        };
        let oriented: Vec<f64> = coords.iter().map(|x| orientation * x).collect();
        let init: Vec<GaussianComponent> = init
            .iter()
            .map(|g| GaussianComponent { mean: orientation * g.mean, ..*g })
            .collect();
        let Ok(hist) = Histogram1D::from_values(&oriented, opts.bin_width) else {
            return worst(Vec::new());
        };
        let Ok(fit) = fit_gaussian_mixture(&hist, &init, opts.gaussian_iterations) else {
            return worst(init.iter().map(GaussianComponent::to_voigt).collect());
        };
        let mut components: Vec<VoigtComponent> = fit.components.iter().map(GaussianComponent::to_voigt).collect();
        components.sort_by(|a, b| a.center.total_cmp(&b.center));
        if self.k == 1 {
            return TrialFit { angle, orientation, components, boundaries: Some(Vec::new()), objective: 0.0 };
        }
        match optimize_boundaries(&components) {
            Ok(b) => match crosstalk_matrix(&components, &b) {
                Ok(m) => TrialFit { angle, orientation, components, boundaries: Some(b), objective: total_crosstalk(&m) },
                Err(_) => worst(components),
            },
            Err(_) => worst(components),
        }
    }
}

fn log_pdf(g: &GaussianComponent, x: f64) -> f64 {
    let z = (x - g.mean) / g.sd;
    -0.5 * z * z - g.sd.ln()
}

/// Angle search. `k` overrides the component count, which otherwise is the
/// largest number of histogram peaks seen on the coarse grid.
pub fn optimize_angle(delays: &[EdgeDelays], k: Option<usize>, opts: &AngleSearchOptions) -> Result<AngleSearch> {
    let (labelled, reference_angle, grid_peaks) = label_events(delays, k, opts)?;
    search_labelled(&labelled, reference_angle, &grid_peaks, opts)
}

pub(crate) fn label_events<'a>(
    delays: &'a [EdgeDelays],
    k: Option<usize>,
    opts: &AngleSearchOptions,
) -> Result<(Labelled<'a>, f64, Vec<usize>)> {
    if delays.is_empty() {
        return Err(Error::EmptySample("no detected events to calibrate".into()));
    }
    if opts.grid_points < 2 || opts.grid_points % 2 != 0 {
        return Err(Error::InvalidParameter("grid_points must be even and >= 2".into()));
    }
    if k == Some(0) {
        return Err(Error::InvalidParameter("component count must be >= 1".into()));
    }
    let grid: Vec<f64> = (0..opts.grid_points).map(|i| i as f64 * PI / opts.grid_points as f64).collect();
    let mut best: Option<(f64, Vec<(f64, f64)>)> = None;
    let mut grid_peaks = Vec::with_capacity(grid.len());
    for &a in &grid {
        let hist = Histogram1D::from_values(&project(delays, a), opts.bin_width)?;
        let peaks = find_peaks_detailed(&hist, opts.smoothing_bins, opts.min_prominence).unwrap_or_default();
        grid_peaks.push(peaks.len());
        let list: Vec<(f64, f64)> = peaks.iter().map(|p| (p.position, p.prominence)).collect();
        if best.as_ref().is_none_or(|b| list.len() > b.1.len()) {
            best = Some((a, list));
        }
    }
    let (reference_angle, mut peaks) = best.expect("non-empty grid");
    if peaks.is_empty() {
        return Err(Error::CalibrationFailure("no peaks found at any projection angle".into()));
    }
    let k = k.unwrap_or(peaks.len());
    if k > peaks.len() {
        return Err(Error::CalibrationFailure(format!(
            "requested {k} components but at most {} peaks are resolved",
            peaks.len()
        )));
    }
    // keep the k most prominent peaks
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    peaks.truncate(k);
    let mut positions: Vec<f64> = peaks.iter().map(|p| p.0).collect();
    positions.sort_by(f64::total_cmp);
    let labelled = Labelled::from_reference(delays, reference_angle, &positions, opts)?;
    Ok((labelled, reference_angle, grid_peaks))
}

pub(crate) fn search_labelled(
    labelled: &Labelled<'_>,
    reference_angle: f64,
    grid_peaks: &[usize],
    opts: &AngleSearchOptions,
) -> Result<AngleSearch> {
    let g = opts.grid_points;
    let step = PI / g as f64;
    let mut trials = Vec::new();
    let mut best: Option<TrialFit> = None;
    let consider = |fit: TrialFit, peaks: Option<usize>, trials: &mut Vec<AngleTrial>, best: &mut Option<TrialFit>| {
        trials.push(AngleTrial { angle: fit.angle, orientation: fit.orientation, objective: fit.objective, peaks });
        let better = match best {
            None => true,
            Some(b) => fit.objective < b.objective || (fit.objective == b.objective && fit.angle < b.angle),
        };
        if better {
            *best = Some(fit);
        }
    };
    for (i, &peaks) in grid_peaks.iter().enumerate() {
        let fit = labelled.trial(i as f64 * step, opts);
        consider(fit, Some(peaks), &mut trials, &mut best);
    }
    let centre = best.as_ref().expect("grid evaluated").angle;
    let tol = opts.refine_tolerance_deg.to_radians();
    let mut refined = Vec::new();
    golden_section_min(
        |a| {
            let fit = labelled.trial(a, opts);
            let v = fit.objective;
            refined.push(fit);
            v
        },
        centre - step,
        centre + step,
        tol,
        200,
    );
    for fit in refined {
        consider(fit, None, &mut trials, &mut best);
    }
    let best = best.expect("at least one trial");
    let Some(boundaries) = best.boundaries.clone() else {
        return Err(Error::CalibrationFailure(format!(
            "no projection angle separates the {} clusters",
            labelled.k
        )));
    };
    Ok(AngleSearch {
        angle: best.angle,
        orientation: best.orientation,
        objective: best.objective,
        components: best.components,
        boundaries,
        reference_angle,
        k: labelled.k,
        trials,
    })
}
