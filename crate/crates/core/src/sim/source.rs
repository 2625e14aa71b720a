use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Triggers per independently seeded simulation chunk.
pub(crate) const CHUNK_TRIGGERS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceKind {
    /// Attenuated laser pulse; photon number is Poisson with mean `mu` at the source.
    /// A second beam of the same mean, independent of the first, reaches
    /// detector B when `efficiency_b > 0`.
    Coherent { mu: f64 },
    /// Type-II SPDC pairs split onto the two detectors.
    SpdcPairs {
        /// Probability of a pair per trigger, or the mean pair number with `multi_pair`.
        pair_prob: f64,
        #[serde(default)]
        multi_pair: bool,
    },
    /// Hong-Ou-Mandel interfered pairs, modelled on outcome level.
    Noon2 { visibility: f64, pair_prob: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub repetition_rate_hz: f64,
    pub efficiency_a: f64,
    pub efficiency_b: f64,
    #[serde(default)]
    pub trigger_channel_jitter_ps: f64,
}

impl SourceSpec {
    /// Coherent light on detector A only.
    pub fn coherent(mu: f64, efficiency: f64) -> Self {
        Self {
            kind: SourceKind::Coherent { mu },
            repetition_rate_hz: 100e3,
            efficiency_a: efficiency,
            efficiency_b: 0.0,
            trigger_channel_jitter_ps: 0.0,
        }
    }

    pub fn split_pairs(pair_prob: f64, efficiency_a: f64, efficiency_b: f64) -> Self {
        Self {
            kind: SourceKind::SpdcPairs { pair_prob, multi_pair: false },
            repetition_rate_hz: 100e3,
            efficiency_a,
            efficiency_b,
            trigger_channel_jitter_ps: 0.0,
        }
    }

    pub fn noon2(visibility: f64, pair_prob: f64, efficiency_a: f64, efficiency_b: f64) -> Self {
        Self {
            kind: SourceKind::Noon2 { visibility, pair_prob },
            repetition_rate_hz: 100e3,
            efficiency_a,
            efficiency_b,
            trigger_channel_jitter_ps: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit(self.efficiency_a, "efficiency_a")?;
        unit(self.efficiency_b, "efficiency_b")?;
        if !(self.repetition_rate_hz > 0.0 && self.repetition_rate_hz.is_finite()) {
            return Err(Error::InvalidParameter("repetition_rate_hz must be > 0".into()));
        }
        if !(self.trigger_channel_jitter_ps >= 0.0) {
            return Err(Error::InvalidParameter("trigger_channel_jitter_ps must be >= 0".into()));
        }
        match self.kind {
            SourceKind::Coherent { mu } => {
                if !(mu >= 0.0 && mu.is_finite()) {
                    return Err(Error::InvalidParameter(format!("mu must be >= 0, got {mu}")));
                }
            }
            SourceKind::SpdcPairs { pair_prob, multi_pair } => {
                if multi_pair {
                    if !(pair_prob >= 0.0 && pair_prob.is_finite()) {
                        return Err(Error::InvalidParameter("mean pair number must be >= 0".into()));
                    }
                } else {
                    unit(pair_prob, "pair_prob")?;
                }
            }
            SourceKind::Noon2 { visibility, pair_prob } => {
                unit(visibility, "visibility")?;
                unit(pair_prob, "pair_prob")?;
            }
        }
        Ok(())
    }

    /// Mean detected photon number on detector A for a coherent source.
    pub fn detected_mean_a(&self) -> Option<f64> {
        match self.kind {
            SourceKind::Coherent { mu } => Some(mu * self.efficiency_a),
            _ => None,
        }
    }

    pub fn detected_mean_b(&self) -> Option<f64> {
        match self.kind {
            SourceKind::Coherent { mu } => Some(mu * self.efficiency_b),
            _ => None,
        }
    }
}

/// Post-loss photon numbers reaching each detector on one trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub trigger_index: u64,
    pub true_n_a: u32,
    pub true_n_b: u32,
}

pub(crate) fn chunk_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn thin<R: Rng>(n: u32, eta: f64, rng: &mut R) -> u32 {
    if n == 0 || eta >= 1.0 {
        return if eta <= 0.0 { 0 } else { n };
    }
    if eta <= 0.0 {
        return 0;
    }
    Binomial::new(u64::from(n), eta).expect("valid binomial").sample(rng) as u32
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("valid poisson").sample(rng) as u32
}

/// Samples one chunk of photon numbers with its own generator.
pub(crate) fn sample_chunk(spec: &SourceSpec, first: u64, count: usize, rng: &mut ChaCha8Rng) -> Vec<TruthRecord> {
    (0..count as u64)
        .map(|i| {
            let (a, b) = match spec.kind {
                SourceKind::Coherent { mu } => {
                    let a = poisson(mu, rng);
                    let b = if spec.efficiency_b > 0.0 { poisson(mu, rng) } else { 0 };
                    (a, b)
                }
                SourceKind::SpdcPairs { pair_prob, multi_pair } => {
                    let pairs = if multi_pair {
                        poisson(pair_prob, rng)
                    } else {
                        u32::from(rng.random::<f64>() < pair_prob)
                    };
                    (pairs, pairs)
                }
                SourceKind::Noon2 { visibility, pair_prob } => {
                    if rng.random::<f64>() < pair_prob {
                        let u: f64 = rng.random();
                        let p20 = (1.0 + visibility) / 4.0;
                        if u < p20 {
                            (2, 0)
                        } else if u < 2.0 * p20 {
                            (0, 2)
                        } else {
                            (1, 1)
                        }
                    } else {
                        (0, 0)
                    }
                }
            };
            TruthRecord {
                trigger_index: first + i,
                true_n_a: thin(a, spec.efficiency_a, rng),
                true_n_b: thin(b, spec.efficiency_b, rng),
            }
        })
        .collect()
}

/// Post-loss photon numbers for `n_triggers` triggers, deterministic in `seed`.
///
/// Triggers are generated in fixed-size chunks with per-chunk generator
/// streams, so the output does not depend on how many workers run.
pub fn sample_source(spec: &SourceSpec, n_triggers: usize, seed: u64) -> Result<Vec<TruthRecord>> {
    use rayon::prelude::*;

    spec.validate()?;
    if n_triggers == 0 {
        return Err(Error::InvalidParameter("n_triggers must be >= 1".into()));
    }
    let chunks = n_triggers.div_ceil(CHUNK_TRIGGERS);
    let parts: Vec<Vec<TruthRecord>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let first = c * CHUNK_TRIGGERS;
            let count = CHUNK_TRIGGERS.min(n_triggers - first);
            let mut rng = chunk_rng(seed, source_stream(c));
            sample_chunk(spec, first as u64, count, &mut rng)
        })
        .collect();
    Ok(parts.concat())
}

pub(crate) fn source_stream(chunk: usize) -> u64 {
    2 * chunk as u64
}

pub(crate) fn noise_stream(chunk: usize) -> u64 {
    2 * chunk as u64 + 1
}

/// Truth sidecar as CSV with header `trigger_index,true_n_a,true_n_b`.
pub fn write_truth_csv<W: std::io::Write>(records: &[TruthRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: std::io::Read>(source: R) -> Result<Vec<TruthRecord>> {
    csv::Reader::from_reader(source)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mu_gives_vacuum() {
        let t = sample_source(&SourceSpec::coherent(0.0, 0.86), 1000, 1).unwrap();
        assert!(t.iter().all(|r| r.true_n_a == 0 && r.true_n_b == 0));
    }

    #[test]
    fn ideal_noon_has_no_coincidences() {
        let t = sample_source(&SourceSpec::noon2(1.0, 0.5, 1.0, 1.0), 50_000, 2).unwrap();
        assert!(t.iter().all(|r| !(r.true_n_a == 1 && r.true_n_b == 1)));
        assert!(t.iter().any(|r| r.true_n_a == 2));
        assert!(t.iter().any(|r| r.true_n_b == 2));
    }

    #[test]
    fn ideal_split_pairs_are_always_coincident() {
        let t = sample_source(&SourceSpec::split_pairs(0.3, 1.0, 1.0), 50_000, 3).unwrap();
        assert!(t.iter().all(|r| r.true_n_a == r.true_n_b && r.true_n_a <= 1));
    }

    #[test]
    fn deterministic_and_indexed() {
        let spec = SourceSpec::coherent(2.0, 0.5);
        let a = sample_source(&spec, 200_000, 9).unwrap();
        let b = sample_source(&spec, 200_000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, r)| r.trigger_index == i as u64));
        let c = sample_source(&spec, 200_000, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn validation() {
        assert!(SourceSpec::coherent(-1.0, 0.5).validate().is_err());
        assert!(SourceSpec::coherent(1.0, 1.5).validate().is_err());
        assert!(SourceSpec::noon2(1.2, 0.5, 1.0, 1.0).validate().is_err());
        assert!(sample_source(&SourceSpec::coherent(1.0, 0.5), 0, 1).is_err());
    }

    #[test]
    fn config_json_shape() {
        let spec: SourceSpec = serde_json::from_str(
            r#"{"kind": {"type": "noon2", "visibility": 0.9, "pair_prob": 0.2},
                "repetition_rate_hz": 1e5, "efficiency_a": 0.3, "efficiency_b": 0.3}"#,
        )
        .unwrap();
        assert!(matches!(spec.kind, SourceKind::Noon2 { .. }));
        let bad = serde_json::from_str::<SourceSpec>(
            r#"{"kind": {"type": "coherent", "mu": 1}, "repetition_rate_hz": 1e5,
                "efficiency_a": 0.3, "efficiency_b": 0.3, "typo": 1}"#,
        );
        assert!(bad.is_err());
    }
}

