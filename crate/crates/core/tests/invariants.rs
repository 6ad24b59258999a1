//! Property tests for the data-model, KDE, detector, disaggregation and
//! evaluation invariants.
#![allow(clippy::needless_range_loop)]

use chrono::{Duration, TimeZone};
use chrono_tz::Europe::Paris;
use cwh_core::detector::ObservationThreshold;
use cwh_core::{
    activation_metrics, attribute, consumption_fractions, evaluate_density, extract_spikes,
    filter_aligned, first_local_minimum, interval_confusion, offset_to_nearest_start,
    parse_load_curve, scott_bandwidth, segment, to_activations, truth_activations,
    AttributionSeries, DetectionResult, GroundTruth, LoadCurve, OffPeakInterval, OffPeakSchedule,
    PowerCluster, Spike,
};
use proptest::collection::vec;
use proptest::prelude::*;

fn curve(values: Vec<Option<f64>>) -> LoadCurve {
    let start = Paris.with_ymd_and_hms(2021, 10, 1, 0, 0, 0).unwrap();
    LoadCurve::new("prop", start, Duration::minutes(30), values).unwrap()
}

/// Power values: present in [0, 6) kW or missing.
fn power_values(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Option<f64>>> {
    vec(
        prop_oneof![4 => (0.0f64..6.0).prop_map(Some), 1 => Just(None)],
        len,
    )
}

/// 1-3 non-overlapping half-hour-aligned intervals.
fn schedules() -> impl Strategy<Value = OffPeakSchedule> {
    (1usize..=3, vec(0u32..48, 3), vec(1u32..=10, 3)).prop_filter_map(
        "intervals must not overlap",
        |(n, starts, durs)| {
            let intervals: Vec<OffPeakInterval> = (0..n)
                .map(|i| OffPeakInterval {
                    start_min: starts[i] * 30,
                    duration_min: durs[i] * 30,
                })
                .collect();
            OffPeakSchedule::new(intervals, 30, false).ok()
        },
    )
}

proptest! {
    #[test]
    fn csv_round_trip_is_identity(values in power_values(1..400)) {
        let original = curve(values);
        let reparsed =
            parse_load_curve(&original.to_csv(), Paris, original.step(), "prop").unwrap();
        prop_assert_eq!(original, reparsed);
    }

    #[test]
    fn segment_covers_curve_in_order(values in power_values(1..2000), window in 1u32..10) {
        let c = curve(values);
        let obs = segment(&c, window).unwrap();
        let mut next = 0;
        for o in &obs {
            prop_assert_eq!(o.range().start, next);
            next = o.range().end;
        }
        prop_assert_eq!(next, c.len());
    }

    #[test]
    fn offset_bounded_by_half_max_start_gap(
        schedule in schedules(),
        slot in 0usize..(4 * 48),
    ) {
        let c = curve(vec![Some(0.1); 4 * 48]);
        let t = c.timestamp(slot);
        let offset = offset_to_nearest_start(&t, &schedule);
        let bound = (schedule.max_start_gap_min() as i64 + 1) / 2;
        prop_assert!(offset.abs() <= bound, "offset {} vs bound {}", offset, bound);
    }

    #[test]
    fn density_nonnegative_and_normalized(
        samples in vec(-10.0f64..10.0, 2..300),
        bw in 0.05f64..1.0,
    ) {
        let est = evaluate_density(&samples, bw, 512).unwrap();
        prop_assert!(est.density().iter().all(|d| *d >= 0.0));
        let integral = est.integral();
        prop_assert!((integral - 1.0).abs() < 0.01, "integral {}", integral);
    }

    #[test]
    fn valley_abscissas_shift_with_translation(
        raw in vec(0.0f64..1.0, 40..200),
        shift in -5.0f64..5.0,
    ) {
        // Bimodal by construction: half the points moved up by 3.
        let samples: Vec<f64> =
            raw.iter().enumerate().map(|(i, x)| if i % 2 == 0 { *x } else { *x + 3.0 }).collect();
        let moved: Vec<f64> = samples.iter().map(|x| x + shift).collect();
        let (Ok(h1), Ok(h2)) = (scott_bandwidth(&samples), scott_bandwidth(&moved)) else {
            return Ok(());
        };
        let a = evaluate_density(&samples, h1, 512).unwrap();
        let b = evaluate_density(&moved, h2, 512).unwrap();
        let cell = a.grid()[1] - a.grid()[0];
        match (first_local_minimum(&a), first_local_minimum(&b)) {
            (Some(ma), Some(mb)) => {
                prop_assert!((mb - (ma + shift)).abs() <= cell + 1e-9);
            }
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
    }

    #[test]
    fn spikes_are_disjoint_ordered_and_above_threshold(
        values in power_values(48..400),
        threshold in 0.5f64..5.0,
    ) {
        let c = curve(values);
        let obs = segment(&c, 7).unwrap();
        let sched = OffPeakSchedule::parse_ranges(&["22:30-06:30"], 30, false).unwrap();
        let thr = ObservationThreshold { observation: 0, threshold_kw: Some(threshold), reason: None };
        let spikes = extract_spikes(&obs[0], &thr, &sched);
        let mut last_end = 0;
        for s in &spikes {
            prop_assert!(s.length >= 1);
            prop_assert!(s.peak_power_kw > 0.0);
            prop_assert!(s.background_kw >= 0.0);
            prop_assert!(s.start_index >= last_end);
            last_end = s.start_index + s.length;
            for i in s.start_index..s.start_index + s.length {
                prop_assert!(c.values()[i].unwrap() > threshold);
            }
        }
    }

    #[test]
    fn higher_threshold_spikes_nest_in_lower_runs(
        values in power_values(48..400),
        t_low in 0.5f64..2.0,
        bump in 0.1f64..2.0,
    ) {
        let c = curve(values.clone());
        let obs = segment(&c, 7).unwrap();
        let sched = OffPeakSchedule::parse_ranges(&["22:30-06:30"], 30, false).unwrap();
        let t_high = t_low + bump;
        let high = ObservationThreshold {
            observation: 0,
            threshold_kw: Some(t_high),
            reason: None,
        };
        let spikes_high = extract_spikes(&obs[0], &high, &sched);

        // Oracle: maximal above-threshold runs at the lower threshold
        // (ignoring the background-estimability drop rules). Every
        // emitted high-threshold spike must nest inside one, and
        // in-spike points stay above both thresholds.
        let mut low_runs: Vec<(usize, usize)> = Vec::new();
        let mut i = 0;
        while i < values.len() {
            if matches!(values[i], Some(v) if v > t_low) {
                let mut j = i;
                while j + 1 < values.len() && matches!(values[j + 1], Some(v) if v > t_low) {
                    j += 1;
                }
                low_runs.push((i, j + 1));
                i = j + 1;
            } else {
                i += 1;
            }
        }
        for h in &spikes_high {
            for i in h.start_index..h.start_index + h.length {
                prop_assert!(values[i].unwrap() > t_high);
            }
            prop_assert!(low_runs
                .iter()
                .any(|(a, b)| *a <= h.start_index && h.start_index + h.length <= *b));
        }
    }

    #[test]
    fn attribution_never_exceeds_raw_power(values in power_values(96..400)) {
        let c = curve(values);
        // Fabricate a detection over every third run of present values.
        let sched = OffPeakSchedule::parse_ranges(&["22:30-06:30"], 30, false).unwrap();
        let obs = segment(&c, 7).unwrap();
        let thr = ObservationThreshold { observation: 0, threshold_kw: Some(1.0), reason: None };
        let spikes = extract_spikes(&obs[0], &thr, &sched);
        let result = DetectionResult {
            household_id: "prop".into(),
            found: !spikes.is_empty(),
            cluster: (!spikes.is_empty()).then_some(PowerCluster {
                low_kw: 0.8,
                high_kw: 5.0,
                mode_kw: 2.0,
                support: spikes.len(),
            }),
            cwh_spikes: spikes,
            other_spikes: vec![],
        };
        let attr = attribute(&c, &result);
        for (i, v) in attr.values().iter().enumerate() {
            let raw = c.values()[i].unwrap_or(0.0);
            prop_assert!(*v <= raw + 1e-12);
            prop_assert!(*v >= 0.0);
        }

        // Attributed energy equals the activation energies, and the
        // overall fraction is the energy-weighted mean of daily ones.
        if c.total_energy_kwh() > 0.0 {
            let acts = to_activations(&result, c.step());
            let act_energy: f64 = acts.iter().map(|a| a.energy_kwh).sum();
            prop_assert!((attr.total_energy_kwh() - act_energy).abs() < 1e-6);
            let fr = consumption_fractions(&c, &attr).unwrap();
            let weighted: f64 =
                fr.daily.iter().map(|d| d.fraction * d.total_kwh).sum::<f64>() / fr.total_kwh;
            prop_assert!((weighted - fr.overall).abs() < 1e-9);
            prop_assert!(fr.daily.iter().all(|d| (0.0..=1.0).contains(&d.fraction)));
        }
    }

    #[test]
    fn confusion_swap_exchanges_precision_and_recall(
        a in vec(0.0f64..3.0, 10..300),
        b in vec(0.0f64..3.0, 10..300),
    ) {
        let n = a.len().min(b.len());
        let start = Paris.with_ymd_and_hms(2021, 10, 1, 0, 0, 0).unwrap();
        let step = Duration::minutes(30);
        let pred = AttributionSeries::new(start, step, a[..n].to_vec()).unwrap();
        let truth = GroundTruth::new(start, step, b[..n].to_vec()).unwrap();
        let m1 = interval_confusion(&pred, &truth, 0.1).unwrap();

        let pred2 = AttributionSeries::new(start, step, b[..n].to_vec()).unwrap();
        let truth2 = GroundTruth::new(start, step, a[..n].to_vec()).unwrap();
        let m2 = interval_confusion(&pred2, &truth2, 0.1).unwrap();

        prop_assert_eq!(m1.true_positives, m2.true_positives);
        prop_assert_eq!(m1.false_positives, m2.false_negatives);
        prop_assert_eq!(m1.false_negatives, m2.false_positives);
        prop_assert_eq!(m1.precision, m2.recall);
        prop_assert_eq!(m1.recall, m2.precision);
        prop_assert_eq!(
            m1.total(),
            n as u64
        );
    }

    #[test]
    fn matching_is_one_to_one_with_positive_overlap(
        a in vec(0.0f64..3.0, 20..300),
        b in vec(0.0f64..3.0, 20..300),
    ) {
        let n = a.len().min(b.len());
        let start = Paris.with_ymd_and_hms(2021, 10, 1, 0, 0, 0).unwrap();
        let step = Duration::minutes(30);
        let pred_acts = truth_activations(
            &GroundTruth::new(start, step, a[..n].to_vec()).unwrap(),
            0.1,
        );
        let truth_acts = truth_activations(
            &GroundTruth::new(start, step, b[..n].to_vec()).unwrap(),
            0.1,
        );
        let m = activation_metrics(&pred_acts, &truth_acts);

        let mut seen_pred = std::collections::HashSet::new();
        let mut seen_truth = std::collections::HashSet::new();
        for pair in &m.matches {
            prop_assert!(pair.overlap_min > 0);
            prop_assert!(seen_pred.insert(pair.pred_index), "pred matched twice");
            prop_assert!(seen_truth.insert(pair.truth_index), "truth matched twice");
        }
        if let Some(p) = m.precision {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        if let Some(r) = m.recall {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn aligned_filter_is_a_subset_respecting_tolerance(
        offsets in vec(-720i64..720, 0..60),
        tolerance in 0i64..60,
    ) {
        let start = Paris.with_ymd_and_hms(2021, 10, 1, 22, 30, 0).unwrap();
        let spikes: Vec<Spike> = offsets
            .iter()
            .map(|o| Spike {
                household_id: "prop".into(),
                start,
                start_index: 45,
                length: 1,
                offset_min: *o,
                peak_power_kw: 2.0,
                background_kw: 0.2,
                energy_kwh: 1.0,
            })
            .collect();
        let aligned = filter_aligned(&spikes, tolerance);
        prop_assert_eq!(
            aligned.len(),
            offsets.iter().filter(|o| o.abs() <= tolerance).count()
        );
        prop_assert!(aligned.iter().all(|s| s.offset_min.abs() <= tolerance));
    }
}
