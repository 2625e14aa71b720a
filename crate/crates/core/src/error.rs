use std::io;

use thiserror::Error;

use crate::calib::VoigtComponent;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("tags out of order at index {index}: timestamp {timestamp} after {previous}")]
    Ordering {
        index: usize,
        previous: i64,
        timestamp: i64,
    },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("invalid stream format: {0}")]
    Format(String),

    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("photon number {n} never crosses the discriminator threshold")]
    UndetectablePhotonNumber { n: u32 },

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("mixture fit did not converge after {iterations} iterations: {reason}")]
    Fit {
        reason: String,
        iterations: usize,
        best: Vec<VoigtComponent>,
    },

    #[error("adjacent components {lower} and {upper} have no density crossing between their centers")]
    DegenerateOverlap { lower: usize, upper: usize },

    #[error("non-finite projection for event {index}")]
    Data { index: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("incompatible input: {0}")]
    Compatibility(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("all counts in the top category, mean photon number is unbounded")]
    UnboundedMu,

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let msg = e.to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => Error::Format(msg),
        }
    }
}
