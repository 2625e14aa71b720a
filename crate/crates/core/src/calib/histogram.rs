use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timetag::EdgeDelays;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub bin_width: f64,
}

impl Axis {
    /// Axis covering `[lo - 3 bin, hi + 3 bin]`.
    fn padded(lo: f64, hi: f64, bin_width: f64) -> Self {
        let min = lo - 3.0 * bin_width;
        let bins = (((hi + 3.0 * bin_width) - min) / bin_width).ceil().max(1.0);
        Self { min, max: min + bins * bin_width, bin_width }
    }

    pub fn bins(&self) -> usize {
        ((self.max - self.min) / self.bin_width).round() as usize
    }

    pub fn index(&self, x: f64) -> usize {
        (((x - self.min) / self.bin_width).floor().max(0.0) as usize).min(self.bins() - 1)
    }

    pub fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.bin_width
    }
}

/// Dense 2D histogram of (rise, fall) delays; `counts[i * fall_bins + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub rise_axis: Axis,
    pub fall_axis: Axis,
    pub counts: Vec<u64>,
}

fn check_bin(bin: f64, name: &str) -> Result<()> {
    if bin > 0.0 && bin.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be > 0, got {bin}")))
    }
}

fn finite_range(values: impl Iterator<Item = f64>) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite delay {v}")));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

pub fn build_histogram(delays: &[EdgeDelays], rise_bin: f64, fall_bin: f64) -> Result<Histogram2D> {
    check_bin(rise_bin, "rise bin width")?;
    check_bin(fall_bin, "fall bin width")?;
    if delays.is_empty() {
        return Err(Error::EmptySample("no detected events to histogram".into()));
    }
    let (r0, r1) = finite_range(delays.iter().map(|d| d.rise))?;
    let (f0, f1) = finite_range(delays.iter().map(|d| d.fall))?;
    let rise_axis = Axis::padded(r0, r1, rise_bin);
    let fall_axis = Axis::padded(f0, f1, fall_bin);
    let nf = fall_axis.bins();
    let mut counts = vec![0u64; rise_axis.bins() * nf];
    for d in delays {
        counts[rise_axis.index(d.rise) * nf + fall_axis.index(d.fall)] += 1;
    }
    Ok(Histogram2D { rise_axis, fall_axis, counts })
}

impl Histogram2D {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn get(&self, rise_index: usize, fall_index: usize) -> u64 {
        self.counts[rise_index * self.fall_axis.bins() + fall_index]
    }

    /// Grid CSV: header row of fall-bin centres, then one row per rise bin
    /// starting with its centre.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let nf = self.fall_axis.bins();
        write!(w, "rise_ps\\fall_ps")?;
        for j in 0..nf {
            write!(w, ",{}", self.fall_axis.center(j))?;
        }
        writeln!(w)?;
        for i in 0..self.rise_axis.bins() {
            write!(w, "{}", self.rise_axis.center(i))?;
            for c in &self.counts[i * nf..(i + 1) * nf] {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Projection onto the direction `(cos angle, sin angle)` of the (rise, fall) plane.
pub fn project_delays(d: &EdgeDelays, angle: f64) -> f64 {
    d.rise * angle.cos() + d.fall * angle.sin()
}

pub fn project(delays: &[EdgeDelays], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    delays.iter().map(|d| d.rise * c + d.fall * s).collect()
}

/// Dense 1D histogram on `[origin, origin + counts.len() * bin_width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram1D {
    pub origin: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram1D {
    /// Bins aligned to multiples of `bin_width`, spanning the data.
    pub fn from_values(values: &[f64], bin_width: f64) -> Result<Self> {
        check_bin(bin_width, "bin width")?;
        if values.is_empty() {
            return Err(Error::EmptySample("no values to histogram".into()));
        }
        let (lo, hi) = finite_range(values.iter().copied())?;
        let first = (lo / bin_width).floor();
        let last = (hi / bin_width).floor();
        let n = (last - first) as usize + 1;
        let origin = first * bin_width;
        let mut counts = vec![0u64; n];
        for &v in values {
            let i = (((v - origin) / bin_width).floor().max(0.0) as usize).min(n - 1);
            counts[i] += 1;
        }
        Ok(Self { origin, bin_width, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn center(&self, i: usize) -> f64 {
        self.origin + (i as f64 + 0.5) * self.bin_width
    }

    pub fn left_edge(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.bin_width
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn ed(rise: f64, fall: f64) -> EdgeDelays {
        EdgeDelays { rise, fall }
    }

    #[test]
    fn single_event_single_bin() {
        let h = build_histogram(&[ed(10.0, 300.0)], 1.0, 2.0).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert!(h.rise_axis.min <= 7.0 && h.rise_axis.max >= 13.0);
        let i = h.rise_axis.index(10.0);
        let j = h.fall_axis.index(300.0);
        assert_eq!(h.get(i, j), 1);
    }

    #[test]
    fn empty_and_bad_bins() {
        assert!(matches!(build_histogram(&[], 1.0, 1.0), Err(Error::EmptySample(_))));
        assert!(build_histogram(&[ed(1.0, 2.0)], 0.0, 1.0).is_err());
        assert!(Histogram1D::from_values(&[], 1.0).is_err());
    }

    #[test]
    fn csv_grid_shape() {
        let h = build_histogram(&[ed(0.0, 0.0), ed(2.0, 1.0)], 1.0, 1.0).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), h.rise_axis.bins() + 1);
        assert_eq!(lines[0].split(',').count(), h.fall_axis.bins() + 1);
    }

    #[test]
    fn projection_axes() {
        let d = [ed(12.5, 340.0), ed(-3.0, 7.0)];
        assert_eq!(project(&d, 0.0), vec![12.5, -3.0]);
        let p = project(&d, FRAC_PI_2);
        assert!((p[0] - 340.0).abs() < 1e-12 && (p[1] - 7.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn counts_are_conserved(v in prop::collection::vec((-500.0f64..500.0, 0.0f64..2000.0), 1..500),
                                rb in 0.1f64..20.0, fb in 0.1f64..20.0) {
            let d: Vec<EdgeDelays> = v.iter().map(|&(r, f)| ed(r, f)).collect();
            let h = build_histogram(&d, rb, fb).unwrap();
            prop_assert_eq!(h.total(), d.len() as u64);
            let h1 = Histogram1D::from_values(&project(&d, 0.7), rb).unwrap();
            prop_assert_eq!(h1.total(), d.len() as u64);
        }
    }
}
