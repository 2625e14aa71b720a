//! Cluster calibration on the (rise, fall) delay plane.

mod angle;
mod boundaries;
mod histogram;
mod mixture;
mod model;
mod peaks;
mod voigt;

pub use angle::{optimize_angle, AngleSearch, AngleSearchOptions, AngleTrial, TrialFit};
pub use boundaries::{
    adjacent_crosstalk, crosstalk_matrix, misassignment_boundaries, optimize_boundaries, pair_misassignment,
    total_crosstalk,
};
pub use histogram::{build_histogram, project, project_delays, Axis, Histogram1D, Histogram2D};
pub use mixture::{
    expected_counts, fit_gaussian_mixture, fit_mixture, fit_mixture_binned, fit_mixture_from, BinResidual, FitReport,
    GaussianComponent, GaussianFit, MixtureFit, MixtureOptions, DEFAULT_BIN_WIDTH_PS,
};
pub use model::{calibrate, calibrate_delays, Calibration, CalibrationModel, CalibrationOptions, Mode, ModelDiagnostics};
pub use peaks::{find_peaks, find_peaks_detailed, Peak, DEFAULT_MIN_PROMINENCE, DEFAULT_SMOOTHING_BINS};
pub use voigt::{faddeeva, sample_mixture, voigt_pdf, voigt_profile, VoigtComponent};
