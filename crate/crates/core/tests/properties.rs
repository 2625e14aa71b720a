//! Randomised invariants across decoding, statistics and the crosstalk model.

use proptest::prelude::*;

use pnr_core::calib::{crosstalk_matrix, misassignment_boundaries, Mode, ModelDiagnostics, VoigtComponent};
use pnr_core::calib::CalibrationModel;
use pnr_core::decode::{decode_events, PhotonRecord};
use pnr_core::photostat::{build_jpnd, category_probabilities, fit_poisson_mu, NumberDistribution};
use pnr_core::timetag::{Detector, EdgeDelays, EdgeEvent};

fn components() -> impl Strategy<Value = Vec<VoigtComponent>> {
    prop::collection::vec((1.0f64..20.0, 0.2f64..5.0, 0.0f64..2.0, 0.05f64..1.0), 2..7).prop_map(|specs| {
        let mut center = 0.0;
        let total: f64 = specs.iter().map(|s| s.3).sum();
        specs
            .into_iter()
            .map(|(gap, sigma, gamma, w)| {
                center += gap;
                VoigtComponent::new(center, sigma, gamma, w / total).unwrap()
            })
            .collect()
    })
}

fn model(components: Vec<VoigtComponent>, angle: f64, orientation: f64) -> CalibrationModel {
    let boundaries = misassignment_boundaries(&components).unwrap();
    let crosstalk = crosstalk_matrix(&components, &boundaries).unwrap();
    CalibrationModel {
        detector: Detector::A,
        mode: Mode::Optimal,
        angle,
        orientation,
        components,
        boundaries,
        crosstalk,
        diagnostics: ModelDiagnostics::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn crosstalk_rows_are_distributions(comps in components()) {
        let m = model(comps, 0.0, 1.0);
        for row in &m.crosstalk {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn decoding_preserves_order_and_zero_events(
        comps in components(),
        angle in 0.0f64..std::f64::consts::PI,
        flip in any::<bool>(),
        detections in prop::collection::vec(prop::option::of((-200.0f64..200.0, -200.0f64..200.0)), 0..200),
    ) {
        let m = model(comps, angle, if flip { -1.0 } else { 1.0 });
        let events: Vec<EdgeEvent> = detections
            .iter()
            .enumerate()
            .map(|(i, d)| EdgeEvent {
                trigger_index: 3 * i as u64,
                trigger_time: 100 * i as i64,
                detector: Detector::A,
                detection: d.map(|(rise, fall)| EdgeDelays { rise, fall }),
            })
            .collect();
        let records = decode_events(&events, &m).unwrap();
        prop_assert_eq!(records.len(), events.len());
        for (r, e) in records.iter().zip(&events) {
            prop_assert_eq!(r.trigger_index, e.trigger_index);
            prop_assert_eq!(r.n == 0, e.detection.is_none());
            prop_assert!(r.n as usize <= m.k());
        }
        // photon number never decreases along the oriented coordinate
        let mut pairs: Vec<(f64, u32)> =
            records.iter().filter_map(|r| r.projected_coord.map(|u| (u, r.n))).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        prop_assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn jpnd_sums_to_triggers_with_consistent_marginals(
        ns in prop::collection::vec((0u32..6, 0u32..6), 1..300),
    ) {
        let rec = |i: usize, channel, n| PhotonRecord {
            trigger_index: i as u64, trigger_time: 0, channel, n, projected_coord: None,
        };
        let a: Vec<_> = ns.iter().enumerate().map(|(i, &(na, _))| rec(i, 1, na)).collect();
        let b: Vec<_> = ns.iter().enumerate().rev().map(|(i, &(_, nb))| rec(i, 3, nb)).collect();
        let j = build_jpnd(&a, &b, 100.0).unwrap();
        prop_assert_eq!(j.total(), ns.len() as u64);
        prop_assert_eq!(j.marginal_a().counts, NumberDistribution::from_records(&a, j.n_max).counts);
        prop_assert_eq!(j.marginal_b().counts, NumberDistribution::from_records(&b, j.n_max).counts);
    }

    #[test]
    fn poisson_fit_recovers_exact_counts(mu in 0.05f64..8.0) {
        let counts: Vec<u64> = category_probabilities(mu, 4).iter().map(|p| (p * 1e12).round() as u64).collect();
        let f = fit_poisson_mu(&NumberDistribution::new(counts, true).unwrap()).unwrap();
        prop_assert!((f.mu - mu).abs() < 1e-6 * mu.max(1.0), "{} vs {}", f.mu, mu);
        prop_assert!(0.0 < f.ci_low && f.ci_low <= mu && mu <= f.ci_high, "{:?}", (f.ci_low, f.ci_high));
    }
}
