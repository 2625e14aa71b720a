//! Subcommand bodies.

use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use pnr_core::calib::{
    build_histogram, calibrate as run_calibration, expected_counts, Calibration, CalibrationModel, CalibrationOptions,
    Histogram1D, Mode,
};
use pnr_core::decode::{
    check_stream_channels, confusion_report, decode_diagnostics, decode_stream, read_records_binary, read_records_csv,
    write_records_binary, write_records_csv, PhotonRecord, RECORD_MAGIC,
};
use pnr_core::photostat::{
    build_jpnd, estimate_efficiency, hom_contrast, stats_report, PoissonFitOptions, DEFAULT_DISPLAY_N_MAX,
    MIN_FIT_COUNTS,
};
use pnr_core::sim::{default_params, read_truth_csv, simulate as run_simulation, write_truth_csv, SimulationConfig};
use pnr_core::timetag::{detected_delays, pair_edges, read_stream, write_stream, Detector, TimeTag, DEFAULT_WINDOW_PS};
use pnr_core::Error;

use crate::error::{CliError, CliResult};
use crate::output::OutDir;
use crate::GlobalArgs;

pub const STREAM_FILE: &str = "stream.pnrtag";
pub const TRUTH_FILE: &str = "stream.truth.csv";
const TRUTH_SUFFIX: &str = ".truth.csv";
/// Bin widths of the exported (rise, fall) histogram, ps.
const HISTOGRAM_BIN_PS: f64 = 1.0;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub window_ps: Option<f64>,
    pub mode: Option<Mode>,
    pub simulate: Option<SimulationConfig>,
    pub calibrate: CalibrationOptions,
    pub stats: StatsConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub display_n_max: u32,
    pub fit: PoissonFitOptions,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { display_n_max: DEFAULT_DISPLAY_N_MAX, fit: PoissonFitOptions::default() }
    }
}

/// Flags and configuration merged; flags win.
struct Run {
    config: RunConfig,
    seed: Option<u64>,
    window_ps: f64,
    mode: Mode,
    quiet: bool,
    out: OutDir,
}

impl Run {
    fn new(g: &GlobalArgs, inputs: &[&Path]) -> CliResult<Self> {
        for p in inputs {
            resolve(p)?;
        }
        let config = match &g.config {
            Some(path) => load_config(&resolve(path)?)?,
            None => RunConfig::default(),
        };
        let window_ps = g.window.or(config.window_ps).unwrap_or(DEFAULT_WINDOW_PS);
        if !(window_ps > 0.0 && window_ps.is_finite()) {
            return Err(CliError::Usage(format!("--window must be a positive number of ps, got {window_ps}")));
        }
        Ok(Self {
            seed: g.seed.or(config.seed),
            mode: g.mode.map(Mode::from).or(config.mode).unwrap_or(Mode::Optimal),
            window_ps,
            quiet: g.quiet,
            out: OutDir::create(&g.out)?,
            config,
        })
    }

    fn summary(&self, mut value: serde_json::Value) -> CliResult<()> {
        if self.quiet {
            return Ok(());
        }
        value["files"] = json!(self.out.written());
        let mut out = std::io::stdout().lock();
        serde_json::to_writer_pretty(&mut out, &value).map_err(|e| CliError::Core(Error::Io(e.into())))?;
        writeln!(out).map_err(|e| CliError::Core(e.into()))
    }
}

fn resolve(p: &Path) -> CliResult<PathBuf> {
    fs::canonicalize(p).map_err(|e| CliError::path(p, e))
}

fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::path(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid configuration {}: {e}", path.display())))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::path(path, e))
}

/// Reads a whole tag stream; an empty file is an empty sample rather than a format error.
fn read_tags(path: &Path) -> CliResult<Vec<TimeTag>> {
    let len = fs::metadata(path).map_err(|e| CliError::path(path, e))?.len();
    if len == 0 {
        return Err(Error::EmptySample(format!("tag file {} is empty", path.display())).into());
    }
    Ok(read_stream(open(path)?)?.collect::<pnr_core::Result<Vec<_>>>()?)
}

/// Photon records in either the binary sidecar or CSV, chosen by the leading magic.
fn read_records(path: &Path) -> CliResult<Vec<PhotonRecord>> {
    let mut head = [0u8; RECORD_MAGIC.len()];
    let n = open(path)?.read(&mut head).map_err(|e| CliError::path(path, e))?;
    if n == head.len() && head == RECORD_MAGIC {
        Ok(read_records_binary(open(path)?)?)
    } else {
        Ok(read_records_csv(open(path)?)?)
    }
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::path(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn mean(values: impl Iterator<Item = u32>, n: usize) -> f64 {
    values.map(f64::from).sum::<f64>() / n as f64
}

pub fn simulate(g: &GlobalArgs, triggers: Option<usize>) -> CliResult<()> {
    let mut run = Run::new(g, &[])?;
    let mut cfg = run.config.simulate.unwrap_or_else(|| {
        let (pulse, jitter, source) = default_params();
        let mut c = SimulationConfig::new(source, 100_000, 0);
        c.pulse = pulse;
        c.jitter = jitter;
        c
    });
    if let Some(n) = triggers {
        cfg.n_triggers = n;
    }
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    let sim = run_simulation(&cfg)?;
    let stream = run.out.write(STREAM_FILE, |w| {
        write_stream(sim.tags.iter().copied(), w)?;
        Ok(())
    })?;
    let truth = run.out.write(TRUTH_FILE, |w| Ok(write_truth_csv(&sim.truth, w)?))?;

    let n = sim.truth.len();
    let detections = |d: Detector| sim.tags.iter().filter(|t| t.channel == d.rise_channel()).count();
    let summary = json!({
        "command": "simulate",
        "seed": cfg.seed,
        "triggers": n,
        "tags": sim.tags.len(),
        "detections": { "a": detections(Detector::A), "b": detections(Detector::B) },
        "detected_mean": {
            "a": mean(sim.truth.iter().map(|t| t.true_n_a), n),
            "b": mean(sim.truth.iter().map(|t| t.true_n_b), n),
        },
        "expected_detected_mean": { "a": cfg.source.detected_mean_a(), "b": cfg.source.detected_mean_b() },
        "sha256": { "stream": sha256_file(&stream)?, "truth": sha256_file(&truth)? },
    });
    run.summary(summary)
}

fn write_projection<W: Write>(w: &mut W, delays: &[pnr_core::timetag::EdgeDelays], model: &CalibrationModel, bin: f64) -> CliResult<()> {
    let coords: Vec<f64> = delays.iter().map(|d| model.coordinate(d)).collect();
    let hist = Histogram1D::from_values(&coords, bin)?;
    let wsum: f64 = model.components.iter().map(|c| c.weight).sum();
    let total = expected_counts(&hist, &model.components);
    let parts: Vec<Vec<f64>> = model
        .components
        .iter()
        .map(|c| expected_counts(&hist, std::slice::from_ref(c)).into_iter().map(|v| v * c.weight / wsum).collect())
        .collect();
    let io = |e: std::io::Error| CliError::Core(e.into());
    write!(w, "coordinate_ps,counts,fit_total").map_err(io)?;
    for n in 1..=parts.len() {
        write!(w, ",fit_n{n}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (i, &c) in hist.counts.iter().enumerate() {
        write!(w, "{},{},{}", hist.center(i), c, num(total[i])).map_err(io)?;
        for p in &parts {
            write!(w, ",{}", num(p[i])).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

fn write_crosstalk<W: Write>(w: &mut W, model: &CalibrationModel) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Core(e.into());
    let k = model.k();
    write!(w, "true_n").map_err(io)?;
    for n in 1..=k {
        write!(w, ",decoded_{n}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (i, row) in model.crosstalk.iter().enumerate() {
        write!(w, "{}", i + 1).map_err(io)?;
        for v in row {
            write!(w, ",{}", num(*v)).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

/// Shortest round-trip form, switching to exponent notation for tiny magnitudes.
fn num(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-4 {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn model_summary(m: &CalibrationModel) -> serde_json::Value {
    json!({
        "angle_deg": m.angle.to_degrees(),
        "orientation": m.orientation,
        "components": m.k(),
        "total_crosstalk": m.total_crosstalk(),
        "converged": m.diagnostics.converged,
        "boundary_fallback": m.diagnostics.boundary_fallback,
        "reduced_chi_square": m.diagnostics.reduced_chi_square,
    })
}

pub fn calibrate(g: &GlobalArgs, tags_path: &Path, detector: Detector) -> CliResult<()> {
    let mut run = Run::new(g, &[tags_path])?;
    let tags = read_tags(tags_path)?;
    check_stream_channels(&tags, detector)?;
    let pairing = pair_edges(&tags, run.window_ps, detector)?;
    drop(tags);
    let opts = run.config.calibrate;
    let cal = run_calibration(&pairing.events, detector, &opts)?;
    let delays = detected_delays(&pairing.events);

    run.out.write_json("calibration.json", &cal)?;
    let hist = build_histogram(&delays, HISTOGRAM_BIN_PS, HISTOGRAM_BIN_PS)?;
    run.out.write("histogram2d.csv", |w| Ok(hist.write_csv(w)?))?;
    for mode in [Mode::RisingOnly, Mode::Optimal] {
        let m = cal.model(mode);
        run.out.write(&format!("projection_{}.csv", mode.name()), |w| {
            write_projection(w, &delays, m, opts.mixture.bin_width)
        })?;
        run.out.write(&format!("crosstalk_{}.csv", mode.name()), |w| write_crosstalk(w, m))?;
    }
    let summary = json!({
        "command": "calibrate",
        "detector": detector.name(),
        "pairing": pairing.diagnostics,
        "events": cal.diagnostics.events,
        "optimal": model_summary(&cal.optimal),
        "rising_only": model_summary(&cal.rising_only),
    });
    run.summary(summary)
}

/// Either a full two-mode calibration or a single model.
#[derive(Deserialize)]
#[serde(untagged)]
enum CalibrationFile {
    Full(Box<Calibration>),
    Single(Box<CalibrationModel>),
}

fn load_model(path: &Path, mode: Mode) -> CliResult<CalibrationModel> {
    let text = fs::read_to_string(path).map_err(|e| CliError::path(path, e))?;
    let file: CalibrationFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{} is not a calibration: {e}", path.display())))?;
    let model = match file {
        CalibrationFile::Full(c) => c.model(mode).clone(),
        CalibrationFile::Single(m) => *m,
    };
    model.validate()?;
    Ok(model)
}

fn truth_sidecar(tags_path: &Path) -> Option<PathBuf> {
    let name = tags_path.file_name()?.to_str()?;
    let stem = name.strip_suffix(".pnrtag").unwrap_or(name);
    let candidate = tags_path.with_file_name(format!("{stem}{TRUTH_SUFFIX}"));
    candidate.is_file().then_some(candidate)
}

pub fn decode(g: &GlobalArgs, tags_path: &Path, cal_path: &Path, truth: Option<&Path>) -> CliResult<()> {
    let mut inputs = vec![tags_path, cal_path];
    inputs.extend(truth);
    let mut run = Run::new(g, &inputs)?;
    let model = load_model(cal_path, run.mode)?;
    let tags = read_tags(tags_path)?;
    let (records, pairing) = decode_stream(&tags, &model, run.window_ps)?;
    drop(tags);

    let truth_path = truth.map(Path::to_path_buf).or_else(|| truth_sidecar(tags_path));
    let confusion = match &truth_path {
        Some(p) => Some(confusion_report(&records, &read_truth_csv(open(p)?)?, &model)?),
        None => None,
    };

    run.out.write("records.csv", |w| Ok(write_records_csv(&records, w)?))?;
    run.out.write("records.pnrrec", |w| Ok(write_records_binary(&records, w)?))?;
    let diag = decode_diagnostics(&records, &model);
    let diagnostics = json!({
        "detector": model.detector.name(),
        "mode": model.mode.name(),
        "window_ps": run.window_ps,
        "pairing": pairing,
        "records": diag.records,
        "class_counts": diag.class_counts,
        "out_of_range": diag.out_of_range,
    });
    run.out.write_json("diagnostics.json", &diagnostics)?;
    if let Some(c) = &confusion {
        run.out.write_json("confusion.json", c)?;
    }
    let mut summary = json!({ "command": "decode" });
    for (k, v) in diagnostics.as_object().expect("object") {
        summary[k] = v.clone();
    }
    if let Some(c) = &confusion {
        summary["confusion"] = json!({
            "truth": truth_path.map(|p| p.display().to_string()),
            "overall_accuracy": c.overall_accuracy,
            "off_diagonal_fraction": c.off_diagonal_fraction(),
            "failing_cells": c.failing_cells().len(),
        });
    }
    run.summary(summary)
}

pub fn stats(g: &GlobalArgs, records_path: &Path) -> CliResult<()> {
    let mut run = Run::new(g, &[records_path])?;
    let records = read_records(records_path)?;
    let sc = run.config.stats;
    let report = stats_report(&records, sc.display_n_max, &sc.fit)?;
    run.out.write_json("stats.json", &report)?;
    run.out.write("stats.csv", |w| Ok(report.write_csv(w)?))?;
    let f = &report.fit;
    let summary = json!({
        "command": "stats",
        "records": records.len(),
        "mu": f.mu,
        "ci": [f.ci_low, f.ci_high],
        "confidence": f.confidence,
        "reduced_chi_square": f.reduced_chi_square,
    });
    run.summary(summary)
}

pub fn jpnd(g: &GlobalArgs, a_path: &Path, b_path: &Path, split: Option<(&Path, &Path)>) -> CliResult<()> {
    let mut inputs = vec![a_path, b_path];
    if let Some((sa, sb)) = split {
        inputs.extend([sa, sb]);
    }
    let mut run = Run::new(g, &inputs)?;
    let joint = build_jpnd(&read_records(a_path)?, &read_records(b_path)?, run.window_ps)?;
    if joint.total() < MIN_FIT_COUNTS {
        return Err(Error::InsufficientData(format!(
            "{} joint triggers, at least {MIN_FIT_COUNTS} required",
            joint.total()
        ))
        .into());
    }
    let efficiency = match estimate_efficiency(&joint) {
        Ok(e) => json!(e),
        Err(Error::InsufficientData(msg)) => json!({ "unavailable": msg }),
        Err(e) => return Err(e.into()),
    };
    let hom = match split {
        Some((sa, sb)) => {
            let reference = build_jpnd(&read_records(sa)?, &read_records(sb)?, run.window_ps)?;
            Some(hom_contrast(&joint, &reference)?)
        }
        None => None,
    };
    let report = json!({
        "total": joint.total(),
        "n_max": joint.n_max,
        "counts": joint.counts,
        "two_photon": joint.two_photon(),
        "marginal_a": joint.marginal_a().counts,
        "marginal_b": joint.marginal_b().counts,
        "efficiency": efficiency,
        "hom": hom,
    });
    run.out.write("jpnd.csv", |w| Ok(joint.write_csv(w)?))?;
    run.out.write_json("jpnd.json", &report)?;
    let mut summary = report;
    summary["command"] = json!("jpnd");
    summary.as_object_mut().expect("object").remove("counts");
    run.summary(summary)
}
