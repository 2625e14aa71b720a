//! `pnr`: simulate, calibrate, decode and analyse SNSPD edge-timing data.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pnr_core::calib::Mode;
use pnr_core::timetag::Detector;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "pnr", version, about = "Photon-number resolution from SNSPD rising/falling edge timing")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// JSON configuration for the command; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for simulation; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Calibration mode used for decoding [default: optimal].
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Trigger pairing and coincidence window, ps [default: 10000].
    #[arg(long, global = true, value_name = "PS")]
    pub window: Option<f64>,
    /// Suppress the summary JSON on standard output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    RisingOnly,
    Optimal,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::RisingOnly => Mode::RisingOnly,
            ModeArg::Optimal => Mode::Optimal,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorArg {
    A,
    B,
}

impl From<DetectorArg> for Detector {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::A => Detector::A,
            DetectorArg::B => Detector::B,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic .pnrtag stream and its truth sidecar.
    Simulate {
        /// Number of triggers; overrides the configuration [default: 100000].
        #[arg(long)]
        triggers: Option<usize>,
    },
    /// Calibrate one detector from a .pnrtag stream.
    Calibrate {
        tags: PathBuf,
        #[arg(long, value_enum, default_value_t = DetectorArg::A)]
        detector: DetectorArg,
    },
    /// Decode photon numbers per trigger with a calibration.
    Decode {
        tags: PathBuf,
        /// Calibration JSON written by `calibrate`.
        #[arg(long)]
        calibration: PathBuf,
        /// Truth CSV; defaults to the `.truth.csv` sidecar next to the stream if present.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Photon-number distribution and truncated Poisson fit of decoded records.
    Stats {
        records: PathBuf,
    },
    /// Joint photon-number distribution of two detectors.
    Jpnd {
        records_a: PathBuf,
        records_b: PathBuf,
        /// Split-pair reference records for detector A, enabling the HOM contrast.
        #[arg(long, requires = "split_b")]
        split_a: Option<PathBuf>,
        /// Split-pair reference records for detector B.
        #[arg(long, requires = "split_a")]
        split_b: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("PNR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("PNR_THREADS must be a positive integer, got {value:?}")))?;
    let cap = std::thread::available_parallelism().map_or(n, |p| n.min(p.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(cap)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let g = &cli.global;
    match cli.command {
        Command::Simulate { triggers } => commands::simulate(g, triggers),
        Command::Calibrate { tags, detector } => commands::calibrate(g, &tags, detector.into()),
        Command::Decode { tags, calibration, truth } => commands::decode(g, &tags, &calibration, truth.as_deref()),
        Command::Stats { records } => commands::stats(g, &records),
        Command::Jpnd { records_a, records_b, split_a, split_b } => {
            let split = split_a.zip(split_b);
            commands::jpnd(g, &records_a, &records_b, split.as_ref().map(|(a, b)| (a.as_path(), b.as_path())))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
