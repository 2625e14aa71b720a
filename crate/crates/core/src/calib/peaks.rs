use crate::error::{Error, Result};

use super::histogram::Histogram1D;

pub const DEFAULT_SMOOTHING_BINS: f64 = 2.0;
pub const DEFAULT_MIN_PROMINENCE: f64 = 0.02;

fn smooth(counts: &[u64], sigma: f64) -> Vec<f64> {
    let raw: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    if sigma <= 0.0 {
        return raw;
    }
    let half = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let n = raw.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (o, w) in (-half..=half).zip(&kernel) {
                let j = i + o;
                if (0..n).contains(&j) {
                    acc += w * raw[j as usize];
                }
            }
            acc / norm
        })
        .collect()
}

/// Height above the higher of the two lowest points separating this maximum
/// from taller terrain (or from the zero floor outside the histogram).
fn prominence(s: &[f64], lo: usize, hi: usize) -> f64 {
    let h = s[lo];
    let mut left_min = h;
    let mut i = lo;
    loop {
        if i == 0 {
            left_min = left_min.min(0.0);
            break;
        }
        i -= 1;
        if s[i] > h {
            break;
        }
        left_min = left_min.min(s[i]);
    }
    let mut right_min = h;
    let mut j = hi;
    loop {
        j += 1;
        if j >= s.len() {
            right_min = right_min.min(0.0);
            break;
        }
        if s[j] > h {
            break;
        }
        right_min = right_min.min(s[j]);
    }
    h - left_min.max(right_min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub position: f64,
    /// Smoothed height, counts per bin.
    pub height: f64,
    pub prominence: f64,
}

/// Peak positions (ascending) of the smoothed histogram whose prominence is at
/// least `min_prominence` times the smoothed global maximum.
///
/// A peak must also stand out of the counting noise: its prominence has to
/// exceed four standard deviations of the difference between two smoothed
/// Poisson counts at the peak height.
pub fn find_peaks(hist: &Histogram1D, smoothing_sigma_bins: f64, min_prominence: f64) -> Result<Vec<f64>> {
    Ok(find_peaks_detailed(hist, smoothing_sigma_bins, min_prominence)?
        .into_iter()
        .map(|p| p.position)
        .collect())
}

pub fn find_peaks_detailed(hist: &Histogram1D, smoothing_sigma_bins: f64, min_prominence: f64) -> Result<Vec<Peak>> {
    if hist.counts.is_empty() || hist.total() == 0 {
        return Err(Error::EmptySample("peak search on an empty histogram".into()));
    }
    let s = smooth(&hist.counts, smoothing_sigma_bins);
    let global = s.iter().cloned().fold(0.0, f64::max);
    let floor = min_prominence * global;
    // variance reduction of a Gaussian kernel on Poisson counts
    let noise_scale = if smoothing_sigma_bins > 0.0 {
        (2.0 * std::f64::consts::PI.sqrt() * smoothing_sigma_bins).max(1.0).sqrt().recip()
    } else {
        1.0
    };
    let n = s.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        // treat runs of equal values as one candidate
        let mut j = i;
        while j + 1 < n && s[j + 1] == s[i] {
            j += 1;
        }
        let left = if i == 0 { 0.0 } else { s[i - 1] };
        let right = if j + 1 == n { 0.0 } else { s[j + 1] };
        let prom = if s[i] > left && s[i] > right && s[i] > 0.0 { prominence(&s, i, j) } else { 0.0 };
        let noise = 4.0 * (2.0 * s[i]).sqrt() * noise_scale;
        if prom > 0.0 && prom >= floor && prom > noise {
            let mut x = 0.5 * (hist.center(i) + hist.center(j));
            if i == j && i > 0 && i + 1 < n {
                let denom = s[i - 1] - 2.0 * s[i] + s[i + 1];
                if denom < 0.0 {
                    x += 0.5 * (s[i - 1] - s[i + 1]) / denom * hist.bin_width;
                }
            }
            peaks.push(Peak { position: x, height: s[i], prominence: prom });
        }
        i = j + 1;
    }
    if peaks.is_empty() {
        return Err(Error::CalibrationFailure("no peaks found in projected histogram".into()));
    }
    Ok(peaks)
}
