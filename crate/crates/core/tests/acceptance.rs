//! End-to-end acceptance checks. Each test prints one PASS/FAIL line straight
//! to stdout, so the summary shows up even when output capture is on.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::io::{BufWriter, Write};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pnr_core::calib::{
    adjacent_crosstalk, calibrate, sample_mixture, voigt_profile, Calibration, CalibrationModel, CalibrationOptions,
    VoigtComponent,
};
use pnr_core::decode::{confusion_report, decode_events, PhotonRecord};
use pnr_core::numeric::{binomial_within_3sigma, integrate};
use pnr_core::photostat::{build_jpnd, estimate_efficiency, fit_poisson_mu, NumberDistribution, DEFAULT_DISPLAY_N_MAX};
use pnr_core::sim::{default_params, edge_delays, simulate_stream, PulseModelParams, Simulation, SourceSpec};
use pnr_core::timetag::{
    pair_edges, read_stream, write_stream, Detector, EdgeEvent, StreamHeader, TagWriter, TimeTag, DEFAULT_WINDOW_PS,
};

// Per-thread live-byte accounting, so tests running in parallel do not
// disturb each other's measurements.
struct Counting;

thread_local! {
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
}

fn track(delta: isize) {
    let _ = LIVE.try_with(|live| {
        let now = live.get() + delta;
        live.set(now);
        let _ = PEAK.try_with(|p| p.set(p.get().max(now)));
    });
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            track(layout.size() as isize);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        track(-(layout.size() as isize));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            track(new_size as isize - layout.size() as isize);
        }
        p
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

/// Resets the peak to the current level and returns that level.
fn reset_peak() -> isize {
    let live = LIVE.with(Cell::get);
    PEAK.with(|p| p.set(live));
    live
}

fn peak() -> isize {
    PEAK.with(Cell::get)
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("acceptance {id} [{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{line}");
}

fn events(sim: &Simulation, detector: Detector) -> Vec<EdgeEvent> {
    pair_edges(&sim.tags, DEFAULT_WINDOW_PS, detector).unwrap().events
}

/// Calibration of detector A on 10^5 default triggers, shared by several checks.
fn reference_calibration() -> &'static Calibration {
    static CAL: OnceLock<Calibration> = OnceLock::new();
    CAL.get_or_init(|| {
        let (pulse, jitter, spec) = default_params();
        let sim = simulate_stream(&spec, &pulse, &jitter, 100_000, 1001).unwrap();
        calibrate(&events(&sim, Detector::A), Detector::A, &CalibrationOptions::default()).unwrap()
    })
}

#[test]
fn criterion_1_edge_timing_oracle() {
    let start = Instant::now();
    let p = PulseModelParams::default();
    let (tau_1, tau_f) = (p.hotspot_rise_scale_ps, p.kinetic_inductance_time_ns * 1000.0);
    let mut worst: f64 = 0.0;
    for n in 1..=5u32 {
        let amp = p.amplitude_1 * (1.0 - p.saturation.powi(n as i32)) / (1.0 - p.saturation);
        let v = |t: f64| amp * (1.0 - (-(n as f64) * t / tau_1).exp()) * (-t / tau_f).exp();
        let step = 0.01;
        let mut rise = None;
        let mut i = 1u64;
        let fall = loop {
            let t = i as f64 * step;
            let above = v(t) >= p.threshold;
            if rise.is_none() && above {
                rise = Some(t);
            } else if rise.is_some() && !above {
                break t;
            }
            i += 1;
        };
        let d = edge_delays(n, &p).unwrap();
        worst = worst.max((d.rise - rise.unwrap()).abs()).max((d.fall - fall).abs());
    }
    let table: Vec<_> = (1..=p.max_photons).map(|n| edge_delays(n, &p).unwrap()).collect();
    let monotone = table.windows(2).all(|w| w[1].rise < w[0].rise && w[1].fall > w[0].fall);
    let elapsed = start.elapsed();
    report(
        1,
        "edge timing oracle",
        worst <= 0.05 && monotone && elapsed < Duration::from_secs(1),
        &format!("max deviation {worst:.4} ps (limit 0.05), monotone up to n={}: {monotone}, {elapsed:.2?}", p.max_photons),
    );
}

/// Gaussian convolved with a Lorentzian, substituting `t = gamma tan(theta)`
/// and splitting at the Lorentzian point that lands on the Gaussian peak.
fn convolution(x: f64, sigma: f64, gamma: f64) -> f64 {
    let gauss = |u: f64| (-0.5 * (u / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let f = |th: f64| gauss(x - gamma * th.tan()) / std::f64::consts::PI;
    let half = std::f64::consts::FRAC_PI_2;
    let mid = (x / gamma).atan();
    integrate(f, -half, mid, 0.0, 1e-12).value + integrate(f, mid, half, 0.0, 1e-12).value
}

#[test]
fn criterion_2_voigt_against_convolution() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let sigma = 10f64.powf(rng.random_range(-0.5..1.0));
        let gamma = 10f64.powf(rng.random_range(-1.5..1.0));
        let reach = 10.0 * (sigma + gamma);
        for i in 0..41 {
            let x = -reach + 2.0 * reach * i as f64 / 40.0;
            let want = convolution(x, sigma, gamma);
            worst = worst.max((voigt_profile(x, sigma, gamma) - want).abs() / want);
        }
    }
    let mut gauss_err: f64 = 0.0;
    for sigma in [0.3, 1.0, 1.3, 8.1, 25.0] {
        let c = VoigtComponent::new(0.0, sigma, 0.0, 1.0).unwrap();
        let want = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        gauss_err = gauss_err.max((c.density(0.0) - want).abs() / want);
    }
    let elapsed = start.elapsed();
    report(
        2,
        "Voigt correctness",
        worst < 1e-4 && gauss_err < 1e-6 && elapsed < Duration::from_secs(10),
        &format!("max relative error {worst:.2e} (limit 1e-4), gamma=0 mode error {gauss_err:.2e} (limit 1e-6), {elapsed:.2?}"),
    );
}

#[test]
fn criterion_3_optimal_angle_reduces_crosstalk() {
    let start = Instant::now();
    let (pulse, jitter, spec) = default_params();
    let sim = simulate_stream(&spec, &pulse, &jitter, 100_000, 3).unwrap();
    let cal = calibrate(&events(&sim, Detector::A), Detector::A, &CalibrationOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let (opt, rise) = (&cal.optimal, &cal.rising_only);
    let total_ok = opt.total_crosstalk() < rise.total_crosstalk();
    // adjacent pairs (n, n + 1) for n = 1..=4
    let pairs = 4.min(opt.k().saturating_sub(1));
    let adjacent: Vec<(f64, f64)> = (0..pairs)
        .map(|i| (adjacent_crosstalk(&opt.crosstalk, i), adjacent_crosstalk(&rise.crosstalk, i)))
        .collect();
    let adjacent_ok = pairs == 4 && adjacent.iter().all(|(o, r)| o < r);
    let shown: Vec<String> = adjacent.iter().map(|(o, r)| format!("{o:.1e}<{r:.1e}")).collect();
    report(
        3,
        "optimal angle reduces crosstalk",
        total_ok && adjacent_ok && elapsed < Duration::from_secs(120),
        &format!(
            "angle {:.2} deg, k={}, total {:.2e} vs rising-only {:.2e}, adjacent [{}], {elapsed:.2?}",
            opt.angle.to_degrees(),
            opt.k(),
            opt.total_crosstalk(),
            rise.total_crosstalk(),
            shown.join(", ")
        ),
    );
}

#[test]
fn criterion_4_truncated_poisson_fits() {
    let start = Instant::now();
    let model = &reference_calibration().optimal;
    let (pulse, jitter, _) = default_params();
    let efficiency = 0.86;
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, detected) in [1.0, 2.0, 3.43].into_iter().enumerate() {
        let spec = SourceSpec::coherent(detected / efficiency, efficiency);
        let sim = simulate_stream(&spec, &pulse, &jitter, 1_000_000, 40 + i as u64).unwrap();
        let records = decode_events(&events(&sim, Detector::A), model).unwrap();
        let dist = NumberDistribution::from_records(&records, DEFAULT_DISPLAY_N_MAX);
        let fit = fit_poisson_mu(&dist).unwrap();
        let rel = fit.mu / detected - 1.0;
        let red = fit.reduced_chi_square.unwrap_or(f64::INFINITY);
        pass &= rel.abs() <= 0.02 && red < 2.0;
        parts.push(format!("mu {detected}: fit {:.4} ({:+.2}%), reduced chi2 {red:.2}", fit.mu, 100.0 * rel));
    }
    let elapsed = start.elapsed();
    report(
        4,
        "truncated Poisson fits",
        pass && elapsed < Duration::from_secs(300),
        &format!("{}; {elapsed:.2?}", parts.join("; ")),
    );
}

fn monte_carlo_agreement(model: &CalibrationModel, samples: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = model.k();
    let mut counts = vec![vec![0u64; k]; k];
    for (c, u) in sample_mixture(&model.components, samples, &mut rng) {
        counts[c][model.classify(u) as usize - 1] += 1;
    }
    let mut cells = 0;
    let mut bad = 0;
    for (i, row) in counts.iter().enumerate() {
        let n: u64 = row.iter().sum();
        for (j, &obs) in row.iter().enumerate() {
            cells += 1;
            if !binomial_within_3sigma(obs, n, model.crosstalk[i][j]) {
                bad += 1;
            }
        }
    }
    (cells, bad)
}

#[test]
fn criterion_5_crosstalk_matches_monte_carlo() {
    let model = &reference_calibration().optimal;
    let (cells, bad) = monte_carlo_agreement(model, 1_000_000, 5);
    report(
        5,
        "crosstalk vs Monte-Carlo",
        bad == 0,
        &format!("{} of {cells} cells outside 3 sigma over 10^6 mixture samples", bad),
    );
}

#[test]
fn criterion_6_confusion_matches_prediction() {
    let model = &reference_calibration().optimal;
    let (pulse, jitter, spec) = default_params();
    let sim = simulate_stream(&spec, &pulse, &jitter, 100_000, 6).unwrap();
    let records = decode_events(&events(&sim, Detector::A), model).unwrap();
    let report6 = confusion_report(&records, &sim.truth, model).unwrap();
    let failing: Vec<String> = report6
        .failing_cells()
        .into_iter()
        .filter(|c| c.true_n <= 5)
        .map(|c| format!("({},{}) {} vs {:.1}", c.true_n, c.decoded_n, c.observed, c.expected))
        .collect();
    report(
        6,
        "confusion vs crosstalk prediction",
        report6.consistent_up_to(5),
        &format!(
            "k={}, accuracy {:.5}, failing cells up to N=5: [{}]",
            report6.k,
            report6.overall_accuracy,
            failing.join(", ")
        ),
    );
}

fn decode_pair(sim: &Simulation, a: &CalibrationModel, b: &CalibrationModel) -> (Vec<PhotonRecord>, Vec<PhotonRecord>) {
    (
        decode_events(&events(sim, Detector::A), a).unwrap(),
        decode_events(&events(sim, Detector::B), b).unwrap(),
    )
}

#[test]
fn criterion_7_joint_distributions_and_efficiency() {
    let (pulse, jitter, _) = default_params();
    let mut beams = SourceSpec::coherent(3.43 / 0.86, 0.86);
    beams.efficiency_b = 0.86;
    let sim = simulate_stream(&beams, &pulse, &jitter, 100_000, 70).unwrap();
    let opts = CalibrationOptions::default();
    let cal_a = calibrate(&events(&sim, Detector::A), Detector::A, &opts).unwrap().optimal;
    let cal_b = calibrate(&events(&sim, Detector::B), Detector::B, &opts).unwrap().optimal;

    let jpnd = |spec: SourceSpec, n: usize, seed: u64| {
        let sim = simulate_stream(&spec, &pulse, &jitter, n, seed).unwrap();
        let (a, b) = decode_pair(&sim, &cal_a, &cal_b);
        build_jpnd(&a, &b, DEFAULT_WINDOW_PS).unwrap()
    };
    let noon = jpnd(SourceSpec::noon2(1.0, 0.5, 1.0, 1.0), 200_000, 71);
    let split = jpnd(SourceSpec::split_pairs(0.5, 1.0, 1.0), 200_000, 72);
    let lossy = jpnd(SourceSpec::split_pairs(0.5, 0.30, 0.30), 1_000_000, 73);
    let eff = estimate_efficiency(&lossy).unwrap();

    let noon_ok = noon.get(1, 1) == 0 && noon.get(2, 0) > 0 && noon.get(0, 2) > 0;
    let split_ok = split.get(2, 0) == 0 && split.get(0, 2) == 0 && split.get(1, 1) > 0;
    let eff_ok = (eff.eta_a - 0.30).abs() <= 0.01 && (eff.eta_b - 0.30).abs() <= 0.01;
    report(
        7,
        "JPND and N00N",
        noon_ok && split_ok && eff_ok,
        &format!(
            "noon (2,0)/(0,2)/(1,1) = {}/{}/{}, split (2,0)/(0,2)/(1,1) = {}/{}/{}, eta = ({:.4}, {:.4})",
            noon.get(2, 0),
            noon.get(0, 2),
            noon.get(1, 1),
            split.get(2, 0),
            split.get(0, 2),
            split.get(1, 1),
            eff.eta_a,
            eff.eta_b
        ),
    );
}

#[test]
fn criterion_8_determinism_and_format() {
    let (pulse, jitter, spec) = default_params();
    let bytes = |seed: u64| {
        let sim = simulate_stream(&spec, &pulse, &jitter, 50_000, seed).unwrap();
        let mut buf = Vec::new();
        write_stream(sim.tags.iter().copied(), &mut buf).unwrap();
        buf
    };
    let identical = bytes(8) == bytes(8) && bytes(8) != bytes(9);

    // at least 10^6 tags
    let sim = simulate_stream(&spec, &pulse, &jitter, 400_000, 80).unwrap();
    let tags: Vec<TimeTag> = sim.tags.into_iter().take(1_000_000).collect();
    let mut buf = Vec::new();
    write_stream(tags.iter().copied(), &mut buf).unwrap();
    let back: Vec<TimeTag> = read_stream(&buf[..]).unwrap().collect::<Result<_, _>>().unwrap();
    let round_trip = tags.len() == 1_000_000 && back == tags;
    drop(buf);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("large.pnrtag");
    let target = 100 * 1000 * 1000u64;
    {
        let file = BufWriter::new(std::fs::File::create(&path).unwrap());
        let mut w = TagWriter::new(file, &StreamHeader::default()).unwrap();
        let mut t = 0i64;
        for i in 0..target / 16 {
            t += 1 + (i % 7) as i64;
            w.push(TimeTag::new((i % 5) as u8, t)).unwrap();
        }
        w.finish().unwrap();
    }
    let size = std::fs::metadata(&path).unwrap().len();
    let base = reset_peak();
    let reader = read_stream(std::fs::File::open(&path).unwrap()).unwrap();
    let mut count = 0u64;
    let mut last = i64::MIN;
    for tag in reader {
        let tag = tag.unwrap();
        assert!(tag.timestamp >= last);
        last = tag.timestamp;
        count += 1;
    }
    let used = peak() - base;
    let bounded = count == target / 16 && used < 1 << 20;
    report(
        8,
        "determinism and format",
        identical && round_trip && bounded,
        &format!(
            "same seed identical bytes: {identical}, 10^6-tag round trip: {round_trip}, \
             read {count} tags from {:.1} MB with peak {:.1} KiB allocated",
            size as f64 / 1e6,
            used as f64 / 1024.0
        ),
    );
}
