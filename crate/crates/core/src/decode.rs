//! Per-trigger photon numbers from paired edge events and a calibration.

use std::io::{BufReader, BufWriter, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::CalibrationModel;
use crate::error::{Error, Result};
use crate::numeric::binomial_within_3sigma;
use crate::sim::TruthRecord;
use crate::timetag::{pair_edges, Detector, EdgeEvent, PairingDiagnostics, TimeTag, TRIGGER_CHANNEL};

pub const RECORD_MAGIC: [u8; 8] = *b"PNRREC01";
pub const RECORD_FORMAT_VERSION: u16 = 1;
pub const PHOTON_RECORD_SIZE: usize = 16;

/// Coordinates farther than this many `sigma + gamma` widths outside the outer
/// components count as out of range. They are still decoded into the outer class.
pub const OUT_OF_RANGE_WIDTHS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonRecord {
    pub trigger_index: u64,
    /// Trigger timestamp in 0.1 ps ticks.
    pub trigger_time: i64,
    /// Rising-edge channel of the detector.
    pub channel: u8,
    pub n: u32,
    /// Oriented projection in ps; `None` when nothing was detected.
    pub projected_coord: Option<f64>,
}

impl PhotonRecord {
    pub fn detector(&self) -> Option<Detector> {
        [Detector::A, Detector::B].into_iter().find(|d| d.rise_channel() == self.channel)
    }
}

/// Maps every event to a record, keeping order. Non-detections give `n = 0`;
/// detections are projected with the model and bucketed by its boundaries.
pub fn decode_events(events: &[EdgeEvent], model: &CalibrationModel) -> Result<Vec<PhotonRecord>> {
    model.validate()?;
    if let Some(e) = events.iter().find(|e| e.detector != model.detector) {
        return Err(Error::Compatibility(format!(
            "event for detector {} but calibration is for detector {}",
            e.detector.name(),
            model.detector.name()
        )));
    }
    let channel = model.detector.rise_channel();
    events
        .par_iter()
        .enumerate()
        .map(|(index, e)| {
            let (n, projected_coord) = match &e.detection {
                None => (0, None),
                Some(d) => {
                    let u = model.coordinate(d);
                    if !u.is_finite() {
                        return Err(Error::Data { index });
                    }
                    (model.classify(u), Some(u))
                }
            };
            Ok(PhotonRecord { trigger_index: e.trigger_index, trigger_time: e.trigger_time, channel, n, projected_coord })
        })
        .collect()
}

/// Pairs a raw tag stream and decodes it.
///
/// A stream without trigger tags cannot give zero-photon events and is
/// rejected, as is one that carries only the other detector's channels.
pub fn decode_stream(
    tags: &[TimeTag],
    model: &CalibrationModel,
    window_ps: f64,
) -> Result<(Vec<PhotonRecord>, PairingDiagnostics)> {
    check_stream_channels(tags, model.detector)?;
    let pairing = pair_edges(tags, window_ps, model.detector)?;
    Ok((decode_events(&pairing.events, model)?, pairing.diagnostics))
}

/// Rejects streams that cannot be decoded for `detector`: no triggers, or only another detector's channels.
pub fn check_stream_channels(tags: &[TimeTag], detector: Detector) -> Result<()> {
    let mut seen = [false; 256];
    for t in tags {
        seen[t.channel as usize] = true;
    }
    if !seen[TRIGGER_CHANNEL as usize] {
        return Err(Error::Compatibility("stream has no trigger tags; zero-photon events cannot be inferred".into()));
    }
    let own = seen[detector.rise_channel() as usize] || seen[detector.fall_channel() as usize];
    let other = [Detector::A, Detector::B]
        .into_iter()
        .filter(|&d| d != detector)
        .any(|d| seen[d.rise_channel() as usize] || seen[d.fall_channel() as usize]);
    if !own && other {
        return Err(Error::Compatibility(format!(
            "stream has no tags on channels {}/{} of detector {}",
            detector.rise_channel(),
            detector.fall_channel(),
            detector.name()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeDiagnostics {
    pub records: u64,
    /// Index `n` holds the number of records decoded as `n` photons.
    pub class_counts: Vec<u64>,
    pub out_of_range: u64,
}

pub fn decode_diagnostics(records: &[PhotonRecord], model: &CalibrationModel) -> DecodeDiagnostics {
    let k = model.k();
    let mut class_counts = vec![0u64; k + 1];
    let mut out_of_range = 0;
    let (first, last) = (&model.components[0], &model.components[k - 1]);
    let lo = first.center - OUT_OF_RANGE_WIDTHS * (first.sigma + first.gamma);
    let hi = last.center + OUT_OF_RANGE_WIDTHS * (last.sigma + last.gamma);
    for r in records {
        class_counts[(r.n as usize).min(k)] += 1;
        if r.projected_coord.is_some_and(|u| u < lo || u > hi) {
            out_of_range += 1;
        }
    }
    DecodeDiagnostics { records: records.len() as u64, class_counts, out_of_range }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub true_n: usize,
    pub decoded_n: usize,
    pub observed: u64,
    pub expected: f64,
    pub within_3sigma: bool,
}

/// Decoded against true photon numbers. Rows and columns run over `0..=k`;
/// true numbers above `k` fall into row `k`, the top class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub detector: Detector,
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
    pub row_totals: Vec<u64>,
    /// Fraction of each true class decoded correctly; `None` for empty rows.
    pub accuracy: Vec<Option<f64>>,
    pub overall_accuracy: f64,
    /// Expected row distribution: certain zero for row 0, the model's
    /// crosstalk rows otherwise.
    pub predicted: Vec<Vec<f64>>,
    pub cells: Vec<CellCheck>,
}

impl ConfusionReport {
    pub fn off_diagonal_fraction(&self) -> f64 {
        let total: u64 = self.row_totals.iter().sum();
        let diag: u64 = (0..=self.k).map(|i| self.counts[i][i]).sum();
        if total == 0 {
            0.0
        } else {
            (total - diag) as f64 / total as f64
        }
    }

    /// Every populated cell with true photon number `<= n_max` agrees with
    /// the prediction.
    pub fn consistent_up_to(&self, n_max: usize) -> bool {
        self.cells.iter().filter(|c| c.true_n <= n_max).all(|c| c.within_3sigma)
    }

    pub fn failing_cells(&self) -> Vec<&CellCheck> {
        self.cells.iter().filter(|c| !c.within_3sigma).collect()
    }
}

/// Compares decoded records with simulator truth, matched by trigger index.
pub fn confusion_report(
    records: &[PhotonRecord],
    truth: &[TruthRecord],
    model: &CalibrationModel,
) -> Result<ConfusionReport> {
    model.validate()?;
    if records.len() != truth.len() {
        return Err(Error::Alignment(format!(
            "{} records but {} truth rows",
            records.len(),
            truth.len()
        )));
    }
    if let Some((i, (r, t))) =
        records.iter().zip(truth).enumerate().find(|(_, (r, t))| r.trigger_index != t.trigger_index)
    {
        return Err(Error::Alignment(format!(
            "row {i}: record trigger {} but truth trigger {}",
            r.trigger_index, t.trigger_index
        )));
    }
    let detector = model.detector;
    let k = model.k();
    let mut counts = vec![vec![0u64; k + 1]; k + 1];
    for (r, t) in records.iter().zip(truth) {
        if r.channel != detector.rise_channel() {
            return Err(Error::Compatibility(format!(
                "record on channel {} but calibration is for detector {}",
                r.channel,
                detector.name()
            )));
        }
        let true_n = match detector {
            Detector::A => t.true_n_a,
            Detector::B => t.true_n_b,
        };
        counts[(true_n as usize).min(k)][(r.n as usize).min(k)] += 1;
    }
    let row_totals: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let accuracy = (0..=k)
        .map(|i| (row_totals[i] > 0).then(|| counts[i][i] as f64 / row_totals[i] as f64))
        .collect();
    let total: u64 = row_totals.iter().sum();
    let diag: u64 = (0..=k).map(|i| counts[i][i]).sum();
    let overall_accuracy = if total == 0 { 0.0 } else { diag as f64 / total as f64 };

    let mut predicted = vec![vec![0.0; k + 1]; k + 1];
    predicted[0][0] = 1.0;
    for i in 1..=k {
        predicted[i][1..].copy_from_slice(&model.crosstalk[i - 1]);
    }
    let mut cells = Vec::new();
    for i in 0..=k {
        if row_totals[i] == 0 {
            continue;
        }
        for j in 0..=k {
            let p = predicted[i][j];
            cells.push(CellCheck {
                true_n: i,
                decoded_n: j,
                observed: counts[i][j],
                expected: p * row_totals[i] as f64,
                within_3sigma: binomial_within_3sigma(counts[i][j], row_totals[i], p),
            });
        }
    }
    Ok(ConfusionReport { detector, k, counts, row_totals, accuracy, overall_accuracy, predicted, cells })
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    trigger_index: u64,
    time: i64,
    channel: u8,
    n: u32,
}

/// CSV with header `trigger_index,time,channel,n`; `time` is in 0.1 ps ticks.
pub fn write_records_csv<W: Write>(records: &[PhotonRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in records {
        w.serialize(CsvRow { trigger_index: r.trigger_index, time: r.trigger_time, channel: r.channel, n: r.n })?;
    }
    w.flush()?;
    Ok(())
}

/// Records from CSV. Projected coordinates are not stored and come back `None`.
pub fn read_records_csv<R: Read>(source: R) -> Result<Vec<PhotonRecord>> {
    csv::Reader::from_reader(source)
        .deserialize()
        .map(|row| {
            let row: CsvRow = row?;
            Ok(PhotonRecord {
                trigger_index: row.trigger_index,
                trigger_time: row.time,
                channel: row.channel,
                n: row.n,
                projected_coord: None,
            })
        })
        .collect()
}

/// Binary sidecar: the magic `PNRREC01`, a little-endian `u16` version and
/// `u16` reserved word, a `u64` record count, then 16-byte records of
/// `u8 channel`, `u8 n` (saturating at 255), `u16` reserved, `u32 trigger_index`
/// and `i64 trigger_time`.
pub fn write_records_binary<W: Write>(records: &[PhotonRecord], sink: W) -> Result<()> {
    let mut w = BufWriter::new(sink);
    w.write_all(&RECORD_MAGIC)?;
    w.write_all(&RECORD_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        let index = u32::try_from(r.trigger_index).map_err(|_| {
            Error::InvalidParameter(format!("trigger index {} does not fit the record format", r.trigger_index))
        })?;
        let mut rec = [0u8; PHOTON_RECORD_SIZE];
        rec[0] = r.channel;
        rec[1] = r.n.min(255) as u8;
        rec[4..8].copy_from_slice(&index.to_le_bytes());
        rec[8..16].copy_from_slice(&r.trigger_time.to_le_bytes());
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_binary<R: Read>(source: R) -> Result<Vec<PhotonRecord>> {
    let mut r = BufReader::new(source);
    let mut head = [0u8; 20];
    read_exact_at(&mut r, &mut head, 0)?;
    if head[..8] != RECORD_MAGIC {
        return Err(Error::Format("bad magic, expected PNRREC01".into()));
    }
    let version = u16::from_le_bytes([head[8], head[9]]);
    if version != RECORD_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported record version {version}")));
    }
    let count = u64::from_le_bytes(head[12..20].try_into().expect("8 bytes"));
    let mut out = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut rec = [0u8; PHOTON_RECORD_SIZE];
    for i in 0..count {
        read_exact_at(&mut r, &mut rec, 20 + i * PHOTON_RECORD_SIZE as u64)?;
        out.push(PhotonRecord {
            channel: rec[0],
            n: u32::from(rec[1]),
            trigger_index: u64::from(u32::from_le_bytes(rec[4..8].try_into().expect("4 bytes"))),
            trigger_time: i64::from_le_bytes(rec[8..16].try_into().expect("8 bytes")),
            projected_coord: None,
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format(format!("trailing bytes after {count} records")));
    }
    Ok(out)
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated { offset },
        _ => Error::Io(e),
    })
}
