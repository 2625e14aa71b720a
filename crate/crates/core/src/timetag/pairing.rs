use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ps_to_ticks, ticks_to_ps, Detector, EdgeDelays, EdgeEvent, TimeTag, TRIGGER_CHANNEL};

pub const DEFAULT_WINDOW_PS: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    /// Edges are searched in `[trigger, trigger + window_ps]`.
    #[serde(default = "default_window")]
    pub window_ps: f64,
}

fn default_window() -> f64 {
    DEFAULT_WINDOW_PS
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self { window_ps: DEFAULT_WINDOW_PS }
    }
}

/// Counters for the JSON diagnostics summary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingDiagnostics {
    pub triggers: u64,
    pub detections: u64,
    pub zero_events: u64,
    /// Detector edges never used in a rise/fall pair.
    pub orphan_edges: u64,
    /// Triggers with detector edges in their window but no valid pair.
    pub malformed_events: u64,
}

#[derive(Debug, Clone)]
pub struct Pairing {
    pub events: Vec<EdgeEvent>,
    pub diagnostics: PairingDiagnostics,
}

/// Pairs each trigger with the first rising edge of `detector` in its window and
/// the first falling edge after that rise, still inside the window.
///
/// Every trigger yields one event. Each detector tag is used at most once;
/// because triggers are visited in time order the chosen rises and falls are
/// strictly increasing, so two cursors replace any bookkeeping of used tags.
pub fn pair_edges(tags: &[TimeTag], window_ps: f64, detector: Detector) -> Result<Pairing> {
    if !(window_ps > 0.0) || !window_ps.is_finite() {
        return Err(Error::InvalidParameter(format!("pairing window must be > 0, got {window_ps}")));
    }
    let window = ps_to_ticks(window_ps);
    let rise_ch = detector.rise_channel();
    let fall_ch = detector.fall_channel();

    let mut triggers = Vec::new();
    let mut rises = Vec::new();
    let mut falls = Vec::new();
    for (index, pair) in tags.windows(2).enumerate() {
        if pair[1] < pair[0] {
            return Err(Error::Ordering {
                index: index + 1,
                previous: pair[0].timestamp,
                timestamp: pair[1].timestamp,
            });
        }
    }
    for tag in tags {
        match tag.channel {
            TRIGGER_CHANNEL => triggers.push(tag.timestamp),
            c if c == rise_ch => rises.push(tag.timestamp),
            c if c == fall_ch => falls.push(tag.timestamp),
            _ => {}
        }
    }

    let mut diagnostics = PairingDiagnostics {
        triggers: triggers.len() as u64,
        ..Default::default()
    };
    let mut events = Vec::with_capacity(triggers.len());
    let (mut ri, mut fi) = (0usize, 0usize);
    for (k, &t) in triggers.iter().enumerate() {
        let end = t.saturating_add(window);
        while ri < rises.len() && rises[ri] < t {
            ri += 1;
        }
        let mut detection = None;
        if ri < rises.len() && rises[ri] <= end {
            let r = rises[ri];
            while fi < falls.len() && falls[fi] <= r {
                fi += 1;
            }
            if fi < falls.len() && falls[fi] <= end {
                detection = Some(EdgeDelays {
                    rise: ticks_to_ps(r - t),
                    fall: ticks_to_ps(falls[fi] - t),
                });
                ri += 1;
                fi += 1;
            }
        }
        if detection.is_some() {
            diagnostics.detections += 1;
        } else {
            diagnostics.zero_events += 1;
            if any_in(&rises, t, end) || any_in(&falls, t, end) {
                diagnostics.malformed_events += 1;
            }
        }
        events.push(EdgeEvent {
            trigger_index: k as u64,
            trigger_time: t,
            detector,
            detection,
        });
    }
    diagnostics.orphan_edges = (rises.len() + falls.len()) as u64 - 2 * diagnostics.detections;
    Ok(Pairing { events, diagnostics })
}

fn any_in(sorted: &[i64], lo: i64, hi: i64) -> bool {
    let i = sorted.partition_point(|&x| x < lo);
    i < sorted.len() && sorted[i] <= hi
}
