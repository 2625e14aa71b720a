//! Photon-number resolution from the rising- and falling-edge timing of a
//! superconducting nanowire detector.

pub mod calib;
pub mod decode;
pub mod error;
pub mod numeric;
pub mod photostat;
pub mod sim;
pub mod timetag;

pub use error::{Error, Result};
