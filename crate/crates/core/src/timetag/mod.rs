//! Time-tag records, the `.pnrtag` binary stream format and trigger/edge pairing.

mod format;
mod pairing;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use format::{read_stream, write_stream, StreamHeader, TagReader, TagWriter, HEADER_MAGIC, RECORD_SIZE};
pub use pairing::{pair_edges, Pairing, PairingConfig, PairingDiagnostics, DEFAULT_WINDOW_PS};

/// Timestamp ticks per picosecond (one tick is 0.1 ps).
pub const TICKS_PER_PS: f64 = 10.0;

/// Channel carrying the optical trigger photodiode.
pub const TRIGGER_CHANNEL: u8 = 0;

/// Number of channels defined by the stream format.
pub const CHANNEL_COUNT: u16 = 5;

pub fn ps_to_ticks(ps: f64) -> i64 {
    (ps * TICKS_PER_PS).round() as i64
}

pub fn ticks_to_ps(ticks: i64) -> f64 {
    ticks as f64 / TICKS_PER_PS
}

/// One threshold crossing (or trigger) as reported by the time tagger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub channel: u8,
    /// Ticks of 0.1 ps since stream epoch.
    pub timestamp: i64,
}

impl TimeTag {
    pub fn new(channel: u8, timestamp: i64) -> Self {
        Self { channel, timestamp }
    }
}

/// Stream order: timestamp first, ties broken by channel.
impl Ord for TimeTag {
    fn cmp(&self, other: &Self) -> Ordering {
        self.timestamp
            .cmp(&other.timestamp)
            .then(self.channel.cmp(&other.channel))
    }
}

impl PartialOrd for TimeTag {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// SNSPD channel pair in a two-detector stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    #[default]
    A,
    B,
}

impl Detector {
    pub fn rise_channel(self) -> u8 {
        match self {
            Detector::A => 1,
            Detector::B => 3,
        }
    }

    pub fn fall_channel(self) -> u8 {
        match self {
            Detector::A => 2,
            Detector::B => 4,
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Detector::A => 0,
            Detector::B => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Detector::A),
            1 => Some(Detector::B),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Detector::A => "a",
            Detector::B => "b",
        }
    }
}

impl std::str::FromStr for Detector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Detector::A),
            "b" => Ok(Detector::B),
            other => Err(format!("unknown detector '{other}', expected 'a' or 'b'")),
        }
    }
}

/// Rising and falling edge delays in ps, relative to the trigger tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeDelays {
    pub rise: f64,
    pub fall: f64,
}

/// Per-trigger pairing result. `detection` is `None` for a zero-photon candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub trigger_index: u64,
    /// Trigger timestamp in 0.1 ps ticks.
    pub trigger_time: i64,
    pub detector: Detector,
    pub detection: Option<EdgeDelays>,
}

impl EdgeEvent {
    pub fn has_detection(&self) -> bool {
        self.detection.is_some()
    }

    pub fn rise_delay(&self) -> Option<f64> {
        self.detection.map(|d| d.rise)
    }

    pub fn fall_delay(&self) -> Option<f64> {
        self.detection.map(|d| d.fall)
    }
}

/// Edge delays of all events that carry a detection.
pub fn detected_delays(events: &[EdgeEvent]) -> Vec<EdgeDelays> {
    events.iter().filter_map(|e| e.detection).collect()
}
