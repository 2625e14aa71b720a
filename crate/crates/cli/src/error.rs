//! Exit-code contract and the JSON error report on standard error.

use pnr_core::Error;
use serde_json::{json, Value};
use thiserror::Error as ThisError;

pub const EXIT_IO: u8 = 2;
pub const EXIT_CALIBRATION: u8 = 3;
pub const EXIT_COMPATIBILITY: u8 = 4;
pub const EXIT_INSUFFICIENT: u8 = 5;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    /// Bad flag values or configuration files.
    #[error("{0}")]
    Usage(String),

    #[error("cannot access {path}: {source}")]
    Path { path: String, source: std::io::Error },
}

impl CliError {
    pub fn path(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Path { path: path.display().to_string(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Path { .. } => "io",
            CliError::Core(e) => match e {
                Error::Io(_) => "io",
                Error::Ordering { .. } => "ordering",
                Error::Domain(_) => "domain",
                Error::Format(_) => "format",
                Error::Truncated { .. } => "truncated",
                Error::InvalidParameter(_) => "invalid_parameter",
                Error::UndetectablePhotonNumber { .. } => "undetectable_photon_number",
                Error::EmptySample(_) => "empty_sample",
                Error::CalibrationFailure(_) => "calibration_failure",
                Error::Fit { .. } => "fit",
                Error::DegenerateOverlap { .. } => "degenerate_overlap",
                Error::Data { .. } => "data",
                Error::Alignment(_) => "alignment",
                Error::Compatibility(_) => "compatibility",
                Error::InsufficientData(_) => "insufficient_data",
                Error::UnboundedMu => "unbounded_mu",
                Error::UndefinedRatio(_) => "undefined_ratio",
            },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Path { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                Error::Io(_)
                | Error::Ordering { .. }
                | Error::Domain(_)
                | Error::Format(_)
                | Error::Truncated { .. }
                | Error::InvalidParameter(_) => EXIT_IO,
                Error::UndetectablePhotonNumber { .. }
                | Error::EmptySample(_)
                | Error::CalibrationFailure(_)
                | Error::Fit { .. }
                | Error::DegenerateOverlap { .. } => EXIT_CALIBRATION,
                Error::Data { .. } | Error::Alignment(_) | Error::Compatibility(_) => EXIT_COMPATIBILITY,
                Error::InsufficientData(_) | Error::UnboundedMu | Error::UndefinedRatio(_) => EXIT_INSUFFICIENT,
            },
        }
    }

    fn details(&self) -> Option<Value> {
        match self {
            CliError::Core(Error::Fit { iterations, best, .. }) => Some(json!({ "iterations": iterations, "best": best })),
            CliError::Core(Error::DegenerateOverlap { lower, upper }) => Some(json!({ "lower": lower, "upper": upper })),
            CliError::Core(Error::Data { index }) => Some(json!({ "index": index })),
            CliError::Core(Error::Truncated { offset }) => Some(json!({ "offset": offset })),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut err = json!({
            "kind": self.kind(),
            "code": self.exit_code(),
            "message": self.to_string(),
        });
        if let Some(d) = self.details() {
            err["details"] = d;
        }
        json!({ "error": err })
    }
}

pub type CliResult<T> = Result<T, CliError>;
