use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timetag::{ps_to_ticks, Detector, EdgeDelays, TimeTag, TRIGGER_CHANNEL};

use super::pulse::{edge_delay_table, PulseModelParams};
use super::source::{chunk_rng, noise_stream, sample_chunk, source_stream, SourceSpec, TruthRecord, CHUNK_TRIGGERS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterParams {
    /// Detector A timing jitter, shared by both edges of one pulse (ps RMS).
    pub detector_rms: f64,
    /// Independent time-tagger jitter on every edge channel (ps RMS).
    pub tagger_rms_per_channel: f64,
    /// Detector B timing jitter (ps RMS).
    pub detector_b_rms: f64,
}

impl Default for JitterParams {
    fn default() -> Self {
        Self {
            detector_rms: 8.1,
            tagger_rms_per_channel: 1.3,
            detector_b_rms: 9.2,
        }
    }
}

impl JitterParams {
    pub fn zero() -> Self {
        Self {
            detector_rms: 0.0,
            tagger_rms_per_channel: 0.0,
            detector_b_rms: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.detector_rms, "detector_rms"),
            (self.tagger_rms_per_channel, "tagger_rms_per_channel"),
            (self.detector_b_rms, "detector_b_rms"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn detector(&self, d: Detector) -> f64 {
        match d {
            Detector::A => self.detector_rms,
            Detector::B => self.detector_b_rms,
        }
    }
}

/// Everything needed to regenerate one synthetic run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub source: SourceSpec,
    #[serde(default)]
    pub pulse: PulseModelParams,
    #[serde(default)]
    pub jitter: JitterParams,
    pub n_triggers: usize,
    #[serde(default)]
    pub seed: u64,
    /// Dark-count rate per detector (Hz); off by default.
    #[serde(default)]
    pub dark_count_rate_hz: f64,
    /// Fixed optical/electrical delay between the trigger tag and the photon
    /// reaching the detector, ps. Keeps jittered edges after their trigger.
    #[serde(default = "default_trigger_lead")]
    pub trigger_lead_ps: f64,
}

/// Default trigger lead, ps.
pub const DEFAULT_TRIGGER_LEAD_PS: f64 = 200.0;

fn default_trigger_lead() -> f64 {
    DEFAULT_TRIGGER_LEAD_PS
}

impl SimulationConfig {
    pub fn new(source: SourceSpec, n_triggers: usize, seed: u64) -> Self {
        Self {
            source,
            pulse: PulseModelParams::default(),
            jitter: JitterParams::default(),
            n_triggers,
            seed,
            dark_count_rate_hz: 0.0,
            trigger_lead_ps: DEFAULT_TRIGGER_LEAD_PS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.pulse.validate()?;
        self.jitter.validate()?;
        if self.n_triggers == 0 {
            return Err(Error::InvalidParameter("n_triggers must be >= 1".into()));
        }
        if !(self.dark_count_rate_hz >= 0.0 && self.dark_count_rate_hz.is_finite()) {
            return Err(Error::InvalidParameter("dark_count_rate_hz must be >= 0".into()));
        }
        if !(self.trigger_lead_ps >= 0.0 && self.trigger_lead_ps.is_finite()) {
            return Err(Error::InvalidParameter("trigger_lead_ps must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// Globally sorted tag stream.
    pub tags: Vec<TimeTag>,
    pub truth: Vec<TruthRecord>,
}

/// Documented default set: 100 kHz pulse-picked coherent source at 86 % detector
/// efficiency whose detected mean is 3.43, the pulse model defaults and the
/// measured jitter figures (8.1, 1.3, 9.2) ps.
pub fn default_params() -> (PulseModelParams, JitterParams, SourceSpec) {
    let efficiency = 0.86;
    (
        PulseModelParams::default(),
        JitterParams::default(),
        SourceSpec::coherent(3.43 / efficiency, efficiency),
    )
}

struct Noise {
    trigger: Option<Normal<f64>>,
    detector: [Option<Normal<f64>>; 2],
    tagger: Option<Normal<f64>>,
}

fn normal(sd: f64) -> Option<Normal<f64>> {
    (sd > 0.0).then(|| Normal::new(0.0, sd).expect("finite sd"))
}

fn draw(d: &Option<Normal<f64>>, rng: &mut ChaCha8Rng) -> f64 {
    d.as_ref().map_or(0.0, |n| n.sample(rng))
}

struct ChunkContext<'a> {
    cfg: &'a SimulationConfig,
    delays: &'a [EdgeDelays],
    noise: Noise,
    period_ps: f64,
    dark_prob: f64,
}

impl ChunkContext<'_> {
    fn emit_pulse(&self, detector: Detector, base_ps: f64, delays: EdgeDelays, rng: &mut ChaCha8Rng, out: &mut Vec<TimeTag>) {
        let shared = draw(&self.noise.detector[detector.id() as usize], rng);
        let rise = base_ps + delays.rise + shared + draw(&self.noise.tagger, rng);
        let fall = base_ps + delays.fall + shared + draw(&self.noise.tagger, rng);
        out.push(TimeTag::new(detector.rise_channel(), ps_to_ticks(rise)));
        out.push(TimeTag::new(detector.fall_channel(), ps_to_ticks(fall)));
    }

    fn run(&self, chunk: usize, first: usize, count: usize) -> (Vec<TimeTag>, Vec<TruthRecord>) {
        let mut src_rng = chunk_rng(self.cfg.seed, source_stream(chunk));
        let truth = sample_chunk(&self.cfg.source, first as u64, count, &mut src_rng);
        let mut rng = chunk_rng(self.cfg.seed, noise_stream(chunk));
        let max_n = self.cfg.pulse.max_photons;
        let mut tags = Vec::with_capacity(count * 3);
        for rec in &truth {
            let pulse_time = rec.trigger_index as f64 * self.period_ps;
            let trigger = pulse_time + draw(&self.noise.trigger, &mut rng);
            let arrival = pulse_time + self.cfg.trigger_lead_ps;
            tags.push(TimeTag::new(TRIGGER_CHANNEL, ps_to_ticks(trigger)));
            for (detector, n) in [(Detector::A, rec.true_n_a), (Detector::B, rec.true_n_b)] {
                if n >= 1 {
                    // the detector response saturates at max_photons
                    let delays = self.delays[(n.min(max_n) - 1) as usize];
                    self.emit_pulse(detector, arrival, delays, &mut rng, &mut tags);
                } else if self.dark_prob > 0.0 && rng.random::<f64>() < self.dark_prob {
                    let offset = rng.random::<f64>() * self.period_ps;
                    self.emit_pulse(detector, arrival + offset, self.delays[0], &mut rng, &mut tags);
                }
            }
        }
        tags.sort_unstable();
        (tags, truth)
    }
}

/// Synthetic time-tag stream plus per-trigger ground truth.
///
/// Edge tags sit at `trigger + lead + edge_delays(n) + shared + tagger_i`, where one
/// detector-jitter draw is shared by both edges of a pulse and each edge gets
/// its own tagger-jitter draw. Output is identical for identical seeds.
pub fn simulate_stream(
    spec: &SourceSpec,
    pulse: &PulseModelParams,
    jitter: &JitterParams,
    n_triggers: usize,
    seed: u64,
) -> Result<Simulation> {
    let mut cfg = SimulationConfig::new(*spec, n_triggers, seed);
    cfg.pulse = *pulse;
    cfg.jitter = *jitter;
    simulate(&cfg)
}

pub fn simulate(cfg: &SimulationConfig) -> Result<Simulation> {
    cfg.validate()?;
    let delays = edge_delay_table(&cfg.pulse)?;
    let period_ps = 1e12 / cfg.source.repetition_rate_hz;
    let ctx = ChunkContext {
        cfg,
        delays: &delays,
        noise: Noise {
            trigger: normal(cfg.source.trigger_channel_jitter_ps),
            detector: [normal(cfg.jitter.detector(Detector::A)), normal(cfg.jitter.detector(Detector::B))],
            tagger: normal(cfg.jitter.tagger_rms_per_channel),
        },
        period_ps,
        dark_prob: -(-cfg.dark_count_rate_hz / cfg.source.repetition_rate_hz).exp_m1(),
    };
    let n = cfg.n_triggers;
    let chunks = n.div_ceil(CHUNK_TRIGGERS);
    let parts: Vec<(Vec<TimeTag>, Vec<TruthRecord>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let first = c * CHUNK_TRIGGERS;
            ctx.run(c, first, CHUNK_TRIGGERS.min(n - first))
        })
        .collect();
    let mut tags = Vec::with_capacity(parts.iter().map(|p| p.0.len()).sum());
    let mut truth = Vec::with_capacity(n);
    for (t, r) in parts {
        tags.extend(t);
        truth.extend(r);
    }
    // chunks are individually sorted; only dark pulses near a chunk edge can overlap
    tags.sort();
    Ok(Simulation { tags, truth })
}
