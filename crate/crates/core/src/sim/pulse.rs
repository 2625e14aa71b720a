//! Threshold-crossing model of the SNSPD read-out pulse.
//!
//! An `n`-photon pulse is `v(t) = A_n (1 - exp(-n t / tau_1)) exp(-t / tau_fall)`
//! with `A_n = a_1 (1 - s^n) / (1 - s)`. More photons mean more hotspots, a
//! faster rise and a (compressed) larger amplitude, so the rising edge crosses
//! the discriminator earlier and the falling edge later.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::bisect_root;
use crate::timetag::EdgeDelays;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseModelParams {
    /// Electrical decay constant `L_k / R_load`, ns.
    pub kinetic_inductance_time_ns: f64,
    /// Single-photon rise constant, ps.
    pub hotspot_rise_scale_ps: f64,
    /// Single-photon pulse amplitude, arbitrary units.
    pub amplitude_1: f64,
    /// Amplitude compression factor in (0, 1]; 1 means amplitude grows linearly with n.
    pub saturation: f64,
    /// Discriminator level, same units as `amplitude_1`.
    pub threshold: f64,
    pub max_photons: u32,
}

impl Default for PulseModelParams {
    fn default() -> Self {
        Self {
            kinetic_inductance_time_ns: 0.25,
            hotspot_rise_scale_ps: 250.0,
            amplitude_1: 1.0,
            saturation: 0.65,
            threshold: 0.2,
            max_photons: 6,
        }
    }
}

impl PulseModelParams {
    /// Validated constructor; rejects parameter sets where some `n <= max_photons`
    /// never reaches the threshold.
    pub fn new(
        kinetic_inductance_time_ns: f64,
        hotspot_rise_scale_ps: f64,
        amplitude_1: f64,
        saturation: f64,
        threshold: f64,
        max_photons: u32,
    ) -> Result<Self> {
        let p = Self {
            kinetic_inductance_time_ns,
            hotspot_rise_scale_ps,
            amplitude_1,
            saturation,
            threshold,
            max_photons,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")))
            }
        };
        positive(self.kinetic_inductance_time_ns, "kinetic_inductance_time_ns")?;
        positive(self.hotspot_rise_scale_ps, "hotspot_rise_scale_ps")?;
        positive(self.amplitude_1, "amplitude_1")?;
        positive(self.threshold, "threshold")?;
        if !(self.saturation > 0.0 && self.saturation <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "saturation must lie in (0, 1], got {}",
                self.saturation
            )));
        }
        if self.threshold >= self.amplitude_1 {
            return Err(Error::InvalidParameter("threshold must be below amplitude_1".into()));
        }
        if self.max_photons == 0 {
            return Err(Error::InvalidParameter("max_photons must be >= 1".into()));
        }
        for n in 1..=self.max_photons {
            if self.peak_value(n) <= self.threshold {
                return Err(Error::UndetectablePhotonNumber { n });
            }
        }
        Ok(())
    }

    pub fn fall_time_ps(&self) -> f64 {
        self.kinetic_inductance_time_ns * 1000.0
    }

    pub fn amplitude(&self, n: u32) -> f64 {
        let s = self.saturation;
        if s >= 1.0 {
            self.amplitude_1 * f64::from(n)
        } else {
            self.amplitude_1 * (1.0 - s.powi(n as i32)) / (1.0 - s)
        }
    }

    /// Pulse voltage of an `n`-photon event at `t` ps after absorption.
    pub fn waveform(&self, n: u32, t_ps: f64) -> f64 {
        if t_ps <= 0.0 {
            return 0.0;
        }
        let rate = f64::from(n) / self.hotspot_rise_scale_ps;
        self.amplitude(n) * (-(rate * t_ps)).exp_m1().abs() * (-t_ps / self.fall_time_ps()).exp()
    }

    fn peak_time(&self, n: u32) -> f64 {
        let tau_r = self.hotspot_rise_scale_ps / f64::from(n);
        tau_r * (1.0 + self.fall_time_ps() / tau_r).ln()
    }

    fn peak_value(&self, n: u32) -> f64 {
        self.waveform(n, self.peak_time(n))
    }
}

/// Noiseless rising/falling threshold crossings of an `n`-photon pulse.
///
/// Crossings are bracketed on a coarse scan of the waveform and refined by
/// bisection to well below 0.1 ps, so the result does not depend on the
/// closed form of the pulse.
pub fn edge_delays(n: u32, p: &PulseModelParams) -> Result<EdgeDelays> {
    if n == 0 || n > p.max_photons {
        return Err(Error::InvalidParameter(format!(
            "photon number {n} outside 1..={}",
            p.max_photons
        )));
    }
    let level = p.threshold;
    let f = |t: f64| p.waveform(n, t) - level;
    // past this time v(t) < A_n exp(-t/tau_fall) <= threshold
    let t_end = p.fall_time_ps() * (p.amplitude(n) / level).ln().max(0.0) + p.hotspot_rise_scale_ps;
    let step = (p.hotspot_rise_scale_ps / f64::from(n)).min(p.fall_time_ps()) / 64.0;
    let steps = (t_end / step).ceil() as usize + 1;

    let mut first_up = None;
    let mut last_down = None;
    let mut prev_t = 0.0;
    let mut prev_v = f(0.0);
    for i in 1..=steps {
        let t = i as f64 * step;
        let v = f(t);
        if prev_v <= 0.0 && v > 0.0 && first_up.is_none() {
            first_up = Some((prev_t, t));
        }
        if prev_v > 0.0 && v <= 0.0 {
            last_down = Some((prev_t, t));
        }
        prev_t = t;
        prev_v = v;
    }
    let (Some((a, b)), Some((c, d))) = (first_up, last_down) else {
        return Err(Error::UndetectablePhotonNumber { n });
    };
    let tol = 1e-7;
    let rise = bisect_root(f, a, b, tol).ok_or(Error::UndetectablePhotonNumber { n })?;
    let fall = bisect_root(f, c, d, tol).ok_or(Error::UndetectablePhotonNumber { n })?;
    Ok(EdgeDelays { rise, fall })
}

/// Edge delays for every photon number `1..=max_photons`; index `n - 1`.
pub fn edge_delay_table(p: &PulseModelParams) -> Result<Vec<EdgeDelays>> {
    p.validate()?;
    (1..=p.max_photons).map(|n| edge_delays(n, p)).collect()
}
