//! Photon-number statistics of decoded records: truncated Poisson fits, joint
//! distributions of two detectors and heralded efficiencies.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::gamma_lr;

use crate::decode::PhotonRecord;
use crate::error::{Error, Result};
use crate::numeric::{bisect_root, golden_section_min};

/// Smallest category that is lumped into the `>=` bin by default.
pub const DEFAULT_TOP_CATEGORY: u32 = 4;
/// Photon numbers shown in distribution reports, the last bin being `>=`.
pub const DEFAULT_DISPLAY_N_MAX: u32 = 5;
pub const MIN_FIT_COUNTS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberDistribution {
    /// `counts[n]` for `n = 0..=n_max`.
    pub counts: Vec<u64>,
    pub n_max: u32,
    /// The last bin holds every `n >= n_max`.
    pub aggregate_top: bool,
}

impl NumberDistribution {
    pub fn new(counts: Vec<u64>, aggregate_top: bool) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidParameter("distribution needs at least one bin".into()));
        }
        Ok(Self { n_max: counts.len() as u32 - 1, counts, aggregate_top })
    }

    /// Histogram of decoded photon numbers, lumping `n >= n_max` into the last bin.
    pub fn from_records(records: &[PhotonRecord], n_max: u32) -> Self {
        let mut counts = vec![0u64; n_max as usize + 1];
        for r in records {
            counts[r.n.min(n_max) as usize] += 1;
        }
        Self { counts, n_max, aggregate_top: true }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return 0.0;
        }
        self.counts.iter().enumerate().map(|(n, &c)| n as f64 * c as f64).sum::<f64>() / t as f64
    }

    /// Counts for `0..top` followed by the `>= top` bin.
    fn categories(&self, top: u32) -> Result<Vec<u64>> {
        if self.aggregate_top && self.n_max < top {
            return Err(Error::InvalidParameter(format!(
                "top bin already lumps n >= {}, cannot split it at {top}",
                self.n_max
            )));
        }
        let mut out = vec![0u64; top as usize + 1];
        for (n, &c) in self.counts.iter().enumerate() {
            out[n.min(top as usize)] += c;
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,count")?;
        for (n, c) in self.counts.iter().enumerate() {
            let label = if self.aggregate_top && n as u32 == self.n_max { format!(">={n}") } else { n.to_string() };
            writeln!(w, "{label},{c}")?;
        }
        Ok(())
    }
}

/// `ln P(N = n)` for `N ~ Poisson(mu)`.
pub fn poisson_ln_pmf(n: u32, mu: f64) -> f64 {
    if mu == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -mu + f64::from(n) * mu.ln() - ln_factorial(u64::from(n))
}

/// `P(N >= n)` for `N ~ Poisson(mu)`.
pub fn poisson_tail(n: u32, mu: f64) -> f64 {
    match (n, mu) {
        (0, _) => 1.0,
        (_, m) if m <= 0.0 => 0.0,
        _ => gamma_lr(f64::from(n), mu),
    }
}

/// Category probabilities `p(0), .., p(top - 1), P(N >= top)`.
pub fn category_probabilities(mu: f64, top: u32) -> Vec<f64> {
    (0..top).map(|n| poisson_ln_pmf(n, mu).exp()).chain(std::iter::once(poisson_tail(top, mu))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoissonFitOptions {
    pub top_category: u32,
    /// Coverage of the profile-likelihood interval.
    pub confidence: f64,
}

impl Default for PoissonFitOptions {
    fn default() -> Self {
        Self { top_category: DEFAULT_TOP_CATEGORY, confidence: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryFit {
    pub label: String,
    pub observed: u64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    pub mu: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    pub method_of_moments: f64,
    pub total: u64,
    pub log_likelihood: f64,
    pub categories: Vec<CategoryFit>,
    /// Sum of `(O - E)^2 / E`.
    pub pearson_chi_square: f64,
    /// Sum of `(O - E)^2 / O` over non-empty categories.
    pub neyman_chi_square: f64,
    pub dof: usize,
    pub reduced_chi_square: Option<f64>,
}

fn log_likelihood(cats: &[u64], mu: f64) -> f64 {
    let top = cats.len() as u32 - 1;
    cats.iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(n, &c)| {
            let lp = if n as u32 == top { poisson_tail(top, mu).ln() } else { poisson_ln_pmf(n as u32, mu) };
            c as f64 * lp
        })
        .sum()
}

pub fn fit_poisson_mu(dist: &NumberDistribution) -> Result<PoissonFit> {
    fit_poisson_mu_with(dist, &PoissonFitOptions::default())
}

/// Maximum-likelihood Poisson mean for the categories `0..top` and `>= top`.
pub fn fit_poisson_mu_with(dist: &NumberDistribution, opts: &PoissonFitOptions) -> Result<PoissonFit> {
    if opts.top_category == 0 {
        return Err(Error::InvalidParameter("top category must be >= 1".into()));
    }
    if !(opts.confidence > 0.0 && opts.confidence < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence must lie in (0, 1), got {}", opts.confidence)));
    }
    let total = dist.total();
    if total < MIN_FIT_COUNTS {
        return Err(Error::InsufficientData(format!("{total} counts, need at least {MIN_FIT_COUNTS} to fit")));
    }
    let cats = dist.categories(opts.top_category)?;
    let top = opts.top_category as usize;
    if cats[top] == total {
        return Err(Error::UnboundedMu);
    }
    let n = total as f64;
    let mom = cats.iter().enumerate().map(|(k, &c)| k as f64 * c as f64).sum::<f64>() / n;
    let threshold = ChiSquared::new(1.0).expect("one dof").inverse_cdf(opts.confidence) / 2.0;

    let (mu, ci_low, ci_high) = if cats[0] == total {
        // log-likelihood is -n mu, so the interval closes where n mu = threshold
        (0.0, 0.0, threshold / n)
    } else {
        let nll = |mu: f64| -log_likelihood(&cats, mu);
        let (mut lo, mut hi) = (mom / 4.0, mom * 4.0);
        let mut best = golden_section_min(nll, lo, hi, 1e-12 * hi, 500);
        // lumped counts pull the moment estimate low; widen if the optimum sits on an edge
        let mut widenings = 0;
        while hi - best.x < 1e-6 * hi || best.x - lo < 1e-6 * hi {
            widenings += 1;
            if widenings > 20 {
                return Err(Error::UnboundedMu);
            }
            lo /= 4.0;
            hi *= 4.0;
            best = golden_section_min(nll, lo, hi, 1e-12 * hi, 500);
        }
        let mu = best.x;
        let ll_max = -best.fx;
        let g = |m: f64| ll_max - log_likelihood(&cats, m) - threshold;
        // halve towards zero for a finite bracket; the lumped tail's log is -inf at mu = 0
        let mut lower = mu / 2.0;
        while lower > 1e-300 && g(lower) < 0.0 {
            lower /= 2.0;
        }
        let ci_low = if g(lower) < 0.0 { 0.0 } else { bisect_root(g, lower, mu, 1e-12 * mu).unwrap_or(0.0) };
        let mut upper = mu * 2.0 + 1.0;
        while g(upper) < 0.0 {
            upper *= 2.0;
        }
        let ci_high = bisect_root(g, mu, upper, 1e-12 * upper).unwrap_or(upper);
        (mu, ci_low, ci_high)
    };

    let probs = category_probabilities(mu, opts.top_category);
    let categories: Vec<CategoryFit> = cats
        .iter()
        .zip(&probs)
        .enumerate()
        .map(|(k, (&o, &p))| CategoryFit {
            label: if k == top { format!(">={k}") } else { k.to_string() },
            observed: o,
            expected: p * n,
        })
        .collect();
    let pearson_chi_square = categories
        .iter()
        .filter(|c| c.expected > 0.0)
        .map(|c| (c.observed as f64 - c.expected).powi(2) / c.expected)
        .sum();
    let neyman_chi_square = categories
        .iter()
        .filter(|c| c.observed > 0)
        .map(|c| (c.observed as f64 - c.expected).powi(2) / c.observed as f64)
        .sum();
    // categories minus the total constraint and the fitted mean
    let dof = categories.len().saturating_sub(2);
    Ok(PoissonFit {
        mu,
        ci_low,
        ci_high,
        confidence: opts.confidence,
        method_of_moments: mom,
        total,
        log_likelihood: log_likelihood(&cats, mu),
        categories,
        pearson_chi_square,
        neyman_chi_square,
        dof,
        reduced_chi_square: (dof > 0).then(|| pearson_chi_square / dof as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsBar {
    pub n: String,
    pub observed: u64,
    pub fraction: f64,
    /// Fitted Poisson probability of the same bin.
    pub fitted: f64,
}

/// Bar chart of a distribution against its fitted Poisson curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub distribution: NumberDistribution,
    pub fit: PoissonFit,
    pub bars: Vec<StatsBar>,
}

pub fn stats_report(records: &[PhotonRecord], display_n_max: u32, opts: &PoissonFitOptions) -> Result<StatsReport> {
    let distribution = NumberDistribution::from_records(records, display_n_max.max(opts.top_category));
    let fit = fit_poisson_mu_with(&distribution, opts)?;
    let total = distribution.total() as f64;
    let probs = category_probabilities(fit.mu, distribution.n_max);
    let bars = distribution
        .counts
        .iter()
        .zip(&probs)
        .enumerate()
        .map(|(n, (&c, &p))| StatsBar {
            n: if n as u32 == distribution.n_max { format!(">={n}") } else { n.to_string() },
            observed: c,
            fraction: c as f64 / total,
            fitted: p,
        })
        .collect();
    Ok(StatsReport { distribution, fit, bars })
}

impl StatsReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,observed,fraction,fitted")?;
        for b in &self.bars {
            writeln!(w, "{},{},{},{}", b.n, b.observed, b.fraction, b.fitted)?;
        }
        Ok(())
    }
}

/// Joint photon numbers of two detectors on a shared trigger stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    /// `counts[n_a][n_b]` for `0..=n_max` on both axes, lumping larger numbers.
    pub counts: Vec<Vec<u64>>,
    pub n_max: u32,
    /// Kept as metadata; records are matched by trigger index.
    pub coincidence_window_ps: f64,
}

/// Smallest axis length of a joint distribution; the two-photon cells always exist.
const JPND_MIN_N_MAX: u32 = 2;
const MAX_LISTED_MISSING: usize = 10;

fn sorted_indices(records: &[PhotonRecord], name: &str) -> Result<Vec<u64>> {
    let mut idx: Vec<u64> = records.iter().map(|r| r.trigger_index).collect();
    idx.sort_unstable();
    if let Some(w) = idx.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Alignment(format!("trigger {} appears twice in records {name}", w[0])));
    }
    Ok(idx)
}

fn listed(v: &[u64]) -> String {
    let shown: Vec<String> = v.iter().take(MAX_LISTED_MISSING).map(u64::to_string).collect();
    let more = v.len().saturating_sub(MAX_LISTED_MISSING);
    if more > 0 {
        format!("[{}, ... {more} more]", shown.join(", "))
    } else {
        format!("[{}]", shown.join(", "))
    }
}

pub fn build_jpnd(records_a: &[PhotonRecord], records_b: &[PhotonRecord], window_ps: f64) -> Result<JointDistribution> {
    let ia = sorted_indices(records_a, "a")?;
    let ib = sorted_indices(records_b, "b")?;
    if ia != ib {
        let (mut only_a, mut only_b) = (Vec::new(), Vec::new());
        let (mut i, mut j) = (0, 0);
        while i < ia.len() || j < ib.len() {
            match (ia.get(i), ib.get(j)) {
                (Some(a), Some(b)) if a == b => {
                    i += 1;
                    j += 1;
                }
                (Some(a), Some(b)) if a < b => {
                    only_a.push(*a);
                    i += 1;
                }
                (Some(a), None) => {
                    only_a.push(*a);
                    i += 1;
                }
                (_, Some(b)) => {
                    only_b.push(*b);
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        return Err(Error::Alignment(format!(
            "trigger sets differ: missing from b {}, missing from a {}",
            listed(&only_a),
            listed(&only_b)
        )));
    }
    let n_max = records_a.iter().chain(records_b).map(|r| r.n).max().unwrap_or(0).max(JPND_MIN_N_MAX);
    let mut counts = vec![vec![0u64; n_max as usize + 1]; n_max as usize + 1];
    let by_index = |rs: &[PhotonRecord]| {
        let mut v: Vec<(u64, u32)> = rs.iter().map(|r| (r.trigger_index, r.n)).collect();
        v.sort_unstable();
        v
    };
    for ((_, na), (_, nb)) in by_index(records_a).into_iter().zip(by_index(records_b)) {
        counts[na as usize][nb as usize] += 1;
    }
    Ok(JointDistribution { counts, n_max, coincidence_window_ps: window_ps })
}

impl JointDistribution {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, n_a: usize, n_b: usize) -> u64 {
        self.counts.get(n_a).and_then(|r| r.get(n_b)).copied().unwrap_or(0)
    }

    pub fn marginal_a(&self) -> NumberDistribution {
        let counts = self.counts.iter().map(|row| row.iter().sum()).collect();
        NumberDistribution { counts, n_max: self.n_max, aggregate_top: false }
    }

    pub fn marginal_b(&self) -> NumberDistribution {
        let k = self.n_max as usize + 1;
        let counts = (0..k).map(|j| self.counts.iter().map(|row| row[j]).sum()).collect();
        NumberDistribution { counts, n_max: self.n_max, aggregate_top: false }
    }

    pub fn two_photon(&self) -> TwoPhotonCounts {
        TwoPhotonCounts { n20: self.get(2, 0), n02: self.get(0, 2), n11: self.get(1, 1) }
    }

    /// Grid with detector a along rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "n_a\\n_b")?;
        for j in 0..=self.n_max {
            write!(w, ",{j}")?;
        }
        writeln!(w)?;
        for (i, row) in self.counts.iter().enumerate() {
            write!(w, "{i}")?;
            for c in row {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoPhotonCounts {
    pub n20: u64,
    pub n02: u64,
    pub n11: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub eta_a: f64,
    pub eta_b: f64,
    /// Binomial standard errors of the two ratios.
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub coincidences: u64,
    pub singles_a: u64,
    pub singles_b: u64,
}

/// Heralded efficiencies `eta_a = C / S_b` and `eta_b = C / S_a`, where `C` is
/// the `(1, 1)` count and `S_x` counts triggers with at least one photon on `x`.
/// Valid when at most one pair is emitted per trigger.
pub fn estimate_efficiency(jpnd: &JointDistribution) -> Result<Efficiency> {
    let c = jpnd.get(1, 1);
    let singles = |d: NumberDistribution| d.counts.iter().skip(1).sum::<u64>();
    let (sa, sb) = (singles(jpnd.marginal_a()), singles(jpnd.marginal_b()));
    for (s, name) in [(sa, "a"), (sb, "b")] {
        if s == 0 {
            return Err(Error::InsufficientData(format!("no detections on detector {name}")));
        }
    }
    let ratio = |s: u64| {
        let eta = c as f64 / s as f64;
        (eta, (eta * (1.0 - eta) / s as f64).sqrt())
    };
    let (eta_a, sigma_a) = ratio(sb);
    let (eta_b, sigma_b) = ratio(sa);
    Ok(Efficiency { eta_a, eta_b, sigma_a, sigma_b, coincidences: c, singles_a: sa, singles_b: sb })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomContrast {
    pub noon: TwoPhotonCounts,
    pub split: TwoPhotonCounts,
    /// `(1,1)` of the N00N configuration over `(1,1)` of the split one.
    pub suppression_ratio: f64,
}

pub fn hom_contrast(noon: &JointDistribution, split: &JointDistribution) -> Result<HomContrast> {
    if noon.n_max != split.n_max {
        return Err(Error::Compatibility(format!(
            "distributions cover different photon numbers ({} vs {})",
            noon.n_max, split.n_max
        )));
    }
    let (n, s) = (noon.two_photon(), split.two_photon());
    if s.n11 == 0 {
        return Err(Error::UndefinedRatio("no (1,1) events in the split configuration".into()));
    }
    Ok(HomContrast { noon: n, split: s, suppression_ratio: n.n11 as f64 / s.n11 as f64 })
}
