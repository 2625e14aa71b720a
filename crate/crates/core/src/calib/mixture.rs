//! Binned maximum-likelihood fits of Voigt and Gaussian mixtures.
//!
//! The Voigt fit is a generalised EM: the E-step computes bin responsibilities,
//! the M-step sets weights in closed form and improves each component's shape
//! with a Nelder-Mead search started at the current parameters. An update is
//! only accepted if the binned log-likelihood does not decrease.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{nelder_mead, NelderMeadOptions};

use super::histogram::Histogram1D;
use super::voigt::VoigtComponent;

pub const DEFAULT_BIN_WIDTH_PS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureOptions {
    pub bin_width: f64,
    pub max_iterations: usize,
    /// Converged once an iteration gains less than `tolerance * |logL|`.
    pub tolerance: f64,
    /// Fit the Lorentzian width; otherwise components stay Gaussian.
    pub fit_gamma: bool,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        Self {
            bin_width: DEFAULT_BIN_WIDTH_PS,
            max_iterations: 400,
            tolerance: 1e-10,
            fit_gamma: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinResidual {
    pub center: f64,
    pub observed: f64,
    pub expected: f64,
    /// `(observed - expected) / sqrt(expected)`
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub log_likelihood: f64,
    /// Log-likelihood after every accepted iteration, starting with the initial value.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub chi_square: f64,
    pub dof: usize,
    pub reduced_chi_square: f64,
    #[serde(skip)]
    pub residuals: Vec<BinResidual>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub components: Vec<VoigtComponent>,
    pub report: FitReport,
}

/// Non-empty bins of a histogram.
struct Bins {
    left: Vec<f64>,
    counts: Vec<f64>,
    width: f64,
    total: f64,
}

impl Bins {
    fn new(h: &Histogram1D) -> Self {
        let mut left = Vec::new();
        let mut counts = Vec::new();
        for (i, &c) in h.counts.iter().enumerate() {
            if c > 0 {
                left.push(h.left_edge(i));
                counts.push(c as f64);
            }
        }
        let total = counts.iter().sum();
        Self { left, counts, width: h.bin_width, total }
    }

    fn len(&self) -> usize {
        self.counts.len()
    }
}

/// Probability mass of `c` (unit area) on `[a, a + w]`, composite Simpson with
/// enough panels to resolve a narrow core.
fn bin_mass(c: &VoigtComponent, a: f64, w: f64) -> f64 {
    let panels = ((2.0 * w / (c.sigma + c.gamma)).ceil() as usize).clamp(1, 64);
    let h = w / panels as f64;
    let mut acc = c.density(a) + c.density(a + w);
    for p in 0..panels {
        let x0 = a + p as f64 * h;
        acc += 4.0 * c.density(x0 + 0.5 * h);
        if p > 0 {
            acc += 2.0 * c.density(x0);
        }
    }
    acc * h / 6.0
}

fn log_likelihood(bins: &Bins, comps: &[VoigtComponent], masses: &mut [Vec<f64>]) -> f64 {
    for (k, c) in comps.iter().enumerate() {
        for (b, &a) in bins.left.iter().enumerate() {
            masses[k][b] = bin_mass(c, a, bins.width);
        }
    }
    let mut ll = 0.0;
    for b in 0..bins.len() {
        let p: f64 = comps.iter().enumerate().map(|(k, c)| c.weight * masses[k][b]).sum();
        ll += bins.counts[b] * p.max(1e-300).ln();
    }
    ll
}

fn sigma_floor(bin_width: f64) -> f64 {
    bin_width / 32.0
}

/// Shape parameters `(center, ln(sigma - floor), q)` with `gamma = q^2`.
fn encode(c: &VoigtComponent, floor: f64, fit_gamma: bool) -> Vec<f64> {
    let mut x = vec![c.center, (c.sigma - floor).max(1e-3 * floor).ln()];
    if fit_gamma {
        x.push(c.gamma.sqrt());
    }
    x
}

fn decode(x: &[f64], weight: f64, floor: f64, gamma: f64) -> VoigtComponent {
    VoigtComponent {
        center: x[0],
        sigma: floor + x[1].exp(),
        gamma: x.get(2).map_or(gamma, |q| q * q),
        weight,
    }
}

fn sort_by_center(comps: &mut [VoigtComponent]) {
    comps.sort_by(|a, b| a.center.total_cmp(&b.center));
}

fn check_sample(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("component count must be >= 1".into()));
    }
    if n < 50 * k {
        return Err(Error::InsufficientData(format!(
            "{n} samples for {k} components, need at least {}",
            50 * k
        )));
    }
    Ok(())
}

/// Fits `k = init_peaks.len()` Voigt components to `coords`, starting from the
/// peak positions.
pub fn fit_mixture(coords: &[f64], init_peaks: &[f64], opts: &MixtureOptions) -> Result<MixtureFit> {
    let k = init_peaks.len();
    check_sample(coords.len(), k)?;
    let hist = Histogram1D::from_values(coords, opts.bin_width)?;
    let mut peaks = init_peaks.to_vec();
    peaks.sort_by(f64::total_cmp);
    let spread = sample_sd(coords).max(opts.bin_width);
    let init: Vec<GaussianComponent> = peaks
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut gap = spread;
            if i > 0 {
                gap = gap.min(p - peaks[i - 1]);
            }
            if i + 1 < k {
                gap = gap.min(peaks[i + 1] - p);
            }
            GaussianComponent { mean: p, sd: (gap / 4.0).max(opts.bin_width), weight: 1.0 / k as f64 }
        })
        .collect();
    let gauss = fit_gaussian_mixture(&hist, &init, 200)?;
    let start: Vec<VoigtComponent> = gauss
        .components
        .iter()
        .map(|g| VoigtComponent { center: g.mean, sigma: g.sd, gamma: 0.0, weight: g.weight })
        .collect();
    fit_mixture_binned(&hist, &start, opts)
}

/// Voigt mixture fit on `coords` starting from explicit components.
pub fn fit_mixture_from(coords: &[f64], init: &[VoigtComponent], opts: &MixtureOptions) -> Result<MixtureFit> {
    check_sample(coords.len(), init.len())?;
    let hist = Histogram1D::from_values(coords, opts.bin_width)?;
    fit_mixture_binned(&hist, init, opts)
}

/// Generalised EM on the non-empty bins of `hist`.
pub fn fit_mixture_binned(hist: &Histogram1D, init: &[VoigtComponent], opts: &MixtureOptions) -> Result<MixtureFit> {
    let k = init.len();
    if k == 0 {
        return Err(Error::InvalidParameter("component count must be >= 1".into()));
    }
    if !(opts.bin_width > 0.0 && opts.tolerance >= 0.0) {
        return Err(Error::InvalidParameter("bin_width must be > 0 and tolerance >= 0".into()));
    }
    for c in init {
        c.validate()?;
    }
    let bins = Bins::new(hist);
    if bins.total <= 0.0 {
        return Err(Error::EmptySample("mixture fit on an empty histogram".into()));
    }
    let floor = sigma_floor(bins.width);
    let total_w: f64 = init.iter().map(|c| c.weight).sum();
    let mut comps: Vec<VoigtComponent> = init
        .iter()
        .map(|c| VoigtComponent { sigma: c.sigma.max(2.0 * floor), weight: c.weight / total_w, ..*c })
        .collect();
    let mut masses = vec![vec![0.0; bins.len()]; k];
    let mut ll = log_likelihood(&bins, &comps, &mut masses);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let nm_opts = NelderMeadOptions { max_evaluations: 400, f_tol: 1e-12, x_tol: 1e-7 };
    let mut resp = vec![vec![0.0; bins.len()]; k];

    while iterations < opts.max_iterations {
        iterations += 1;
        // E-step
        let mut nk = vec![0.0; k];
        for b in 0..bins.len() {
            let p: f64 = (0..k).map(|j| comps[j].weight * masses[j][b]).sum();
            for j in 0..k {
                let r = if p > 0.0 { comps[j].weight * masses[j][b] / p } else { 1.0 / k as f64 };
                resp[j][b] = bins.counts[b] * r;
                nk[j] += resp[j][b];
            }
        }
        // M-step: weights, then shapes
        let weights: Vec<f64> = nk.iter().map(|n| (n / bins.total).max(1e-300)).collect();
        let mut candidate: Vec<VoigtComponent> = comps
            .iter()
            .zip(&weights)
            .map(|(c, &w)| VoigtComponent { weight: w, ..*c })
            .collect();
        let weights_only = candidate.clone();
        for j in 0..k {
            let cut = 1e-12 * bins.total;
            let active: Vec<(f64, f64)> = (0..bins.len())
                .filter(|&b| resp[j][b] > cut)
                .map(|b| (bins.left[b], resp[j][b]))
                .collect();
            if active.is_empty() {
                continue;
            }
            let w = candidate[j].weight;
            let gamma0 = candidate[j].gamma;
            let q = |x: &[f64]| {
                let c = decode(x, 1.0, floor, gamma0);
                -active.iter().map(|&(a, r)| r * bin_mass(&c, a, bins.width).max(1e-300).ln()).sum::<f64>()
            };
            let x0 = encode(&candidate[j], floor, opts.fit_gamma);
            let mut steps = vec![0.2 * candidate[j].sigma, 0.1];
            if opts.fit_gamma {
                steps.push(0.3 * candidate[j].sigma.sqrt());
            }
            let r = nelder_mead(q, &x0, &steps, nm_opts);
            candidate[j] = decode(&r.x, w, floor, gamma0);
        }
        let mut new_ll = log_likelihood(&bins, &candidate, &mut masses);
        if !(new_ll >= ll) {
            candidate = weights_only;
            new_ll = log_likelihood(&bins, &candidate, &mut masses);
            if !(new_ll >= ll) {
                // no improving step left; keep the current parameters
                log_likelihood(&bins, &comps, &mut masses);
                converged = true;
                break;
            }
        }
        let gain = new_ll - ll;
        comps = candidate;
        ll = new_ll;
        trace.push(ll);
        if comps.iter().any(|c| !(c.center.is_finite() && c.sigma.is_finite() && c.gamma.is_finite())) {
            return Err(Error::Fit { reason: "non-finite parameters".into(), iterations, best: comps });
        }
        if gain <= opts.tolerance * ll.abs() {
            converged = true;
            break;
        }
    }
    sort_by_center(&mut comps);
    if !converged {
        return Err(Error::Fit {
            reason: format!("log-likelihood still changing after {iterations} iterations"),
            iterations,
            best: comps,
        });
    }
    let n_params = if opts.fit_gamma { 4 * k - 1 } else { 3 * k - 1 };
    let (chi_square, dof, residuals) = goodness_of_fit(hist, &comps, n_params);
    Ok(MixtureFit {
        components: comps,
        report: FitReport {
            log_likelihood: ll,
            log_likelihood_trace: trace,
            iterations,
            converged,
            chi_square,
            dof,
            reduced_chi_square: if dof > 0 { chi_square / dof as f64 } else { f64::NAN },
            residuals,
        },
    })
}

/// Expected counts of the mixture in every bin of `hist`.
pub fn expected_counts(hist: &Histogram1D, comps: &[VoigtComponent]) -> Vec<f64> {
    let n = hist.total() as f64;
    let wsum: f64 = comps.iter().map(|c| c.weight).sum();
    (0..hist.counts.len())
        .map(|i| {
            let a = hist.left_edge(i);
            n * comps.iter().map(|c| c.weight / wsum * bin_mass(c, a, hist.bin_width)).sum::<f64>()
        })
        .collect()
}

/// Pearson chi-square over the histogram range with neighbouring bins merged
/// until each group expects at least five counts.
pub(crate) fn goodness_of_fit(hist: &Histogram1D, comps: &[VoigtComponent], n_params: usize) -> (f64, usize, Vec<BinResidual>) {
    let expected = expected_counts(hist, comps);
    let residuals = hist
        .counts
        .iter()
        .zip(&expected)
        .enumerate()
        .map(|(i, (&o, &e))| BinResidual {
            center: hist.center(i),
            observed: o as f64,
            expected: e,
            pearson: if e > 0.0 { (o as f64 - e) / e.sqrt() } else { 0.0 },
        })
        .collect();
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in hist.counts.iter().zip(&expected) {
        o_acc += o as f64;
        e_acc += e;
        if e_acc >= 5.0 {
            groups.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => groups.push((o_acc, e_acc)),
        }
    }
    let chi: f64 = groups.iter().filter(|g| g.1 > 0.0).map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let dof = groups.len().saturating_sub(1 + n_params);
    (chi, dof, residuals)
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: f64,
    pub sd: f64,
    pub weight: f64,
}

impl GaussianComponent {
    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        (-0.5 * z * z).exp() / (self.sd * (2.0 * PI).sqrt())
    }

    pub fn sf(&self, x: f64) -> f64 {
        0.5 * statrs::function::erf::erfc((x - self.mean) / (self.sd * SQRT_2))
    }

    pub fn to_voigt(&self) -> VoigtComponent {
        VoigtComponent { center: self.mean, sigma: self.sd, gamma: 0.0, weight: self.weight }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub components: Vec<GaussianComponent>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Closed-form EM for a Gaussian mixture on bin centres. Used for fast trial
/// fits; components keep their input order.
pub fn fit_gaussian_mixture(hist: &Histogram1D, init: &[GaussianComponent], max_iterations: usize) -> Result<GaussianFit> {
    let k = init.len();
    if k == 0 {
        return Err(Error::InvalidParameter("component count must be >= 1".into()));
    }
    let xs: Vec<(f64, f64)> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (hist.center(i), c as f64))
        .collect();
    let total: f64 = xs.iter().map(|x| x.1).sum();
    if total <= 0.0 {
        return Err(Error::EmptySample("gaussian fit on an empty histogram".into()));
    }
    let sd_floor = 0.5 * hist.bin_width;
    let wsum: f64 = init.iter().map(|c| c.weight).sum();
    let mut comps: Vec<GaussianComponent> = init
        .iter()
        .map(|c| GaussianComponent { sd: c.sd.max(sd_floor), weight: c.weight / wsum, ..*c })
        .collect();
    let mut ll_prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut ll = f64::NEG_INFINITY;
    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64); k];
    let mut dens = vec![0.0; k];
    while iterations < max_iterations {
        iterations += 1;
        sums.iter_mut().for_each(|s| *s = (0.0, 0.0, 0.0));
        ll = 0.0;
        for &(x, c) in &xs {
            let mut p = 0.0;
            for j in 0..k {
                dens[j] = comps[j].weight * comps[j].pdf(x);
                p += dens[j];
            }
            if p <= 0.0 {
                // far outlier: give it to the nearest component
                let j = (0..k)
                    .min_by(|&a, &b| {
                        let da = ((x - comps[a].mean) / comps[a].sd).abs();
                        let db = ((x - comps[b].mean) / comps[b].sd).abs();
                        da.total_cmp(&db)
                    })
                    .unwrap_or(0);
                sums[j].0 += c;
                sums[j].1 += c * x;
                sums[j].2 += c * x * x;
                ll += c * (-745.0);
                continue;
            }
            ll += c * (p * hist.bin_width).ln();
            for j in 0..k {
                let r = c * dens[j] / p;
                sums[j].0 += r;
                sums[j].1 += r * x;
                sums[j].2 += r * x * x;
            }
        }
        for (j, &(n, sx, sxx)) in sums.iter().enumerate() {
            if !(n > 1e-9 * total) {
                return Err(Error::CalibrationFailure(format!("gaussian component {j} lost all weight")));
            }
            let mean = sx / n;
            let var = (sxx / n - mean * mean).max(sd_floor * sd_floor);
            comps[j] = GaussianComponent { mean, sd: var.sqrt(), weight: n / total };
        }
        if (ll - ll_prev).abs() <= 1e-10 * ll.abs() {
            break;
        }
        ll_prev = ll;
    }
    Ok(GaussianFit { components: comps, log_likelihood: ll, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::voigt::sample_mixture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn draw(comps: &[VoigtComponent], n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_mixture(comps, n, &mut rng).into_iter().map(|s| s.1).collect()
    }

    #[test]
    fn bin_mass_sums_to_one() {
        let c = VoigtComponent::new(0.3, 1.3, 0.0, 1.0).unwrap();
        let total: f64 = (-40..40).map(|i| bin_mass(&c, i as f64 * 0.5, 0.5)).sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
        // a spike narrower than a bin still has mass <= 1
        let spike = VoigtComponent::new(0.25, 0.016, 0.0, 1.0).unwrap();
        assert!(bin_mass(&spike, 0.0, 0.5) <= 1.0 + 1e-6);
    }

    #[test]
    fn recovers_single_voigt() {
        let truth = VoigtComponent::new(10.0, 3.0, 1.0, 1.0).unwrap();
        let x = draw(&[truth], 100_000, 4);
        let fit = fit_mixture(&x, &[10.0], &MixtureOptions::default()).unwrap();
        let c = fit.components[0];
        assert!((c.sigma - 3.0).abs() / 3.0 < 0.05, "{c:?}");
        assert!((c.gamma - 1.0).abs() < 0.05, "{c:?}");
        assert!((c.center - 10.0).abs() < 0.05, "{c:?}");
    }

    #[test]
    fn equal_weights_two_components() {
        let a = VoigtComponent::new(0.0, 2.0, 0.0, 0.5).unwrap();
        let b = VoigtComponent::new(20.0, 2.0, 0.0, 0.5).unwrap();
        let x = draw(&[a, b], 40_000, 5);
        let fit = fit_mixture(&x, &[1.0, 19.0], &MixtureOptions::default()).unwrap();
        for c in &fit.components {
            assert!((c.weight - 0.5).abs() < 0.02, "{:?}", fit.components);
        }
        assert!(fit.components[0].center < fit.components[1].center);
        assert!(fit.report.reduced_chi_square < 2.0, "{:?}", fit.report.reduced_chi_square);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let comps = [
            VoigtComponent::new(0.0, 1.5, 0.2, 0.3).unwrap(),
            VoigtComponent::new(6.0, 1.5, 0.2, 0.7).unwrap(),
        ];
        let x = draw(&comps, 20_000, 6);
        let opts = MixtureOptions { max_iterations: 1000, ..Default::default() };
        let fit = fit_mixture(&x, &[1.0, 5.0], &opts).unwrap();
        for w in fit.report.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0], "{:?}", fit.report.log_likelihood_trace);
        }
    }

    #[test]
    fn iteration_cap_reports_best_so_far() {
        let comps = [VoigtComponent::new(0.0, 2.0, 0.5, 1.0).unwrap()];
        let x = draw(&comps, 5_000, 7);
        let init = [VoigtComponent::new(3.0, 6.0, 0.0, 1.0).unwrap(), VoigtComponent::new(5.0, 6.0, 0.0, 1.0).unwrap()];
        let opts = MixtureOptions { max_iterations: 1, ..Default::default() };
        match fit_mixture_from(&x, &init, &opts) {
            Err(Error::Fit { best, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(best.len(), 2);
            }
            other => panic!("expected fit error, got {other:?}"),
        }
    }

    #[test]
    fn sample_size_precondition() {
        assert!(matches!(fit_mixture(&[1.0; 99], &[0.0, 1.0], &MixtureOptions::default()), Err(Error::InsufficientData(_))));
        assert!(fit_mixture(&[1.0; 100], &[], &MixtureOptions::default()).is_err());
    }

    #[test]
    fn gaussian_em_recovers_parameters() {
        let comps = [
            VoigtComponent::new(-5.0, 1.0, 0.0, 0.25).unwrap(),
            VoigtComponent::new(5.0, 2.0, 0.0, 0.75).unwrap(),
        ];
        let x = draw(&comps, 100_000, 8);
        let h = Histogram1D::from_values(&x, 0.1).unwrap();
        let init = [
            GaussianComponent { mean: -3.0, sd: 3.0, weight: 0.5 },
            GaussianComponent { mean: 3.0, sd: 3.0, weight: 0.5 },
        ];
        let fit = fit_gaussian_mixture(&h, &init, 500).unwrap();
        let (a, b) = (fit.components[0], fit.components[1]);
        assert!((a.mean + 5.0).abs() < 0.05 && (b.mean - 5.0).abs() < 0.05);
        assert!((a.sd - 1.0).abs() < 0.03 && (b.sd - 2.0).abs() < 0.03);
        assert!((a.weight - 0.25).abs() < 0.01);
    }
}
