//! Per-observation background/spike separation and spike feature
//! extraction (step one of the pipeline).
//!
//! Each observation gets its own threshold: a KDE over its present power
//! values, with the first local minimum separating background from spike
//! consumption. Runs of consecutive above-threshold values become
//! [`Spike`]s, carrying their offset to the nearest off-peak start and
//! their background-corrected peak power.

use chrono::{DateTime, Duration};
use chrono_tz::Tz;
use log::debug;
use serde::Serialize;

use crate::config::DetectConfig;
use crate::data::{offset_to_nearest_start_on_grid, Observation, OffPeakSchedule};
use crate::kde::{evaluate_density, first_local_minimum, scott_bandwidth};

/// A maximal run of above-threshold intervals with its off-peak offset
/// and background-corrected peak power.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spike {
    pub household_id: String,
    /// Instant of the first in-spike interval.
    pub start: DateTime<Tz>,
    /// Index of the first in-spike interval within the parent curve.
    pub start_index: usize,
    /// Number of consecutive intervals in the spike.
    pub length: usize,
    /// Signed minutes from the spike start to the nearest off-peak start
    /// (occurrences rounded onto the sampling grid).
    pub offset_min: i64,
    /// Maximum in-spike power minus the local background, kW.
    pub peak_power_kw: f64,
    /// Local background level, kW: mean of the two nearest present values
    /// outside the run (one-sided at observation edges).
    pub background_kw: f64,
    /// Background-corrected energy over the spike, kWh. Intervals where
    /// the background estimate exceeds the raw power contribute zero, so
    /// spike energy always matches the per-interval attribution.
    pub energy_kwh: f64,
}

/// Why an observation produced no threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoThresholdReason {
    /// Fewer present values than the configured floor.
    TooFewSamples,
    /// Zero variance or fewer than two samples; no bandwidth exists.
    DegenerateSamples,
    /// The density has no interior local minimum.
    UnimodalDensity,
}

/// Threshold between background and spike consumption for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservationThreshold {
    pub observation: usize,
    /// `None` means the observation contributes no spikes.
    pub threshold_kw: Option<f64>,
    pub reason: Option<NoThresholdReason>,
}

/// KDE over the observation's present power values with Scott bandwidth;
/// the threshold is the first local minimum of the estimator. Degenerate
/// or unimodal observations yield no threshold (and therefore no spikes);
/// no fallback percentile is invented.
pub fn compute_threshold(obs: &Observation<'_>, config: &DetectConfig) -> ObservationThreshold {
    let index = obs.index();
    let present = obs.present_values();
    if present.len() < config.min_present_per_observation {
        debug!(
            "observation {index}: skipped, {} present values < {}",
            present.len(),
            config.min_present_per_observation
        );
        return ObservationThreshold {
            observation: index,
            threshold_kw: None,
            reason: Some(NoThresholdReason::TooFewSamples),
        };
    }
    let bandwidth = match scott_bandwidth(&present) {
        Ok(h) => h,
        Err(_) => {
            debug!("observation {index}: degenerate samples, no threshold");
            return ObservationThreshold {
                observation: index,
                threshold_kw: None,
                reason: Some(NoThresholdReason::DegenerateSamples),
            };
        }
    };
    let est = evaluate_density(&present, bandwidth, config.grid_points)
        .expect("non-empty samples and positive bandwidth");
    match first_local_minimum(&est) {
        Some(t) => ObservationThreshold {
            observation: index,
            threshold_kw: Some(t),
            reason: None,
        },
        None => {
            debug!("observation {index}: unimodal density, no threshold");
            ObservationThreshold {
                observation: index,
                threshold_kw: None,
                reason: Some(NoThresholdReason::UnimodalDensity),
            }
        }
    }
}

/// Nearest present value strictly before `i` (observation-local).
fn nearest_present_before(values: &[Option<f64>], i: usize) -> Option<f64> {
    values[..i].iter().rev().flatten().next().copied()
}

/// Nearest present value strictly after `j`.
fn nearest_present_after(values: &[Option<f64>], j: usize) -> Option<f64> {
    values[j + 1..].iter().flatten().next().copied()
}

/// Extract maximal above-threshold runs from an observation. Missing
/// values terminate runs; a run with no present value outside it on
/// either side (the whole observation above threshold) is discarded
/// because no local background is estimable.
pub fn extract_spikes(
    obs: &Observation<'_>,
    thr: &ObservationThreshold,
    schedule: &OffPeakSchedule,
) -> Vec<Spike> {
    let Some(threshold) = thr.threshold_kw else {
        return Vec::new();
    };
    let values = obs.values();
    let curve = obs.curve();
    let step_h = curve.step().num_seconds() as f64 / 3600.0;
    let anchor = curve.start();
    let step: Duration = curve.step();

    let mut spikes = Vec::new();
    let mut i = 0;
    while i < values.len() {
        let above = matches!(values[i], Some(v) if v > threshold);
        if !above {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < values.len() && matches!(values[j + 1], Some(v) if v > threshold) {
            j += 1;
        }

        let left = nearest_present_before(values, i);
        let right = nearest_present_after(values, j);
        let background = match (left, right) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        };
        if let Some(background) = background {
            let run: Vec<f64> = values[i..=j]
                .iter()
                .map(|v| v.expect("run is present"))
                .collect();
            let raw_peak = run.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let peak_power_kw = raw_peak - background;
            if peak_power_kw > 0.0 {
                let energy_kwh: f64 =
                    run.iter().map(|v| (v - background).max(0.0)).sum::<f64>() * step_h;
                let start = obs.timestamp(i);
                let offset_min = offset_to_nearest_start_on_grid(&start, schedule, &anchor, step);
                spikes.push(Spike {
                    household_id: curve.household_id().to_string(),
                    start,
                    start_index: obs.range().start + i,
                    length: j - i + 1,
                    offset_min,
                    peak_power_kw,
                    background_kw: background,
                    energy_kwh,
                });
            }
        } else {
            debug!(
                "observation {}: run of {} intervals has no outside points, dropped",
                obs.index(),
                j - i + 1
            );
        }
        i = j + 1;
    }
    spikes
}

/// Spike debug dump rows:
/// `start,length,offset_min,peak_power_kw,background_kw,energy_kwh`.
pub fn spikes_to_csv(spikes: &[Spike]) -> String {
    let mut out = String::from("start,length,offset_min,peak_power_kw,background_kw,energy_kwh\n");
    for s in spikes {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.start.to_rfc3339_opts(chrono::SecondsFormat::Secs, false),
            s.length,
            s.offset_min,
            s.peak_power_kw,
            s.background_kw,
            s.energy_kwh
        ));
    }
    out
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::data::{segment, LoadCurve};
    use chrono::TimeZone;
    use chrono_tz::Europe::Paris;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn curve_starting_midnight(values: Vec<Option<f64>>) -> LoadCurve {
        let start = Paris.with_ymd_and_hms(2021, 10, 1, 0, 0, 0).unwrap();
        LoadCurve::new("h1", start, Duration::minutes(30), values).unwrap()
    }

    fn nightly_schedule() -> OffPeakSchedule {
        OffPeakSchedule::parse_ranges(&["22:30-06:30"], 30, true).unwrap()
    }

    #[test]
    fn constant_week_has_no_threshold() {
        let curve = curve_starting_midnight(vec![Some(0.3); 7 * 48]);
        let obs = segment(&curve, 7).unwrap();
        let thr = compute_threshold(&obs[0], &DetectConfig::default());
        assert_eq!(thr.threshold_kw, None);
        assert_eq!(thr.reason, Some(NoThresholdReason::DegenerateSamples));
    }

    #[test]
    fn too_few_present_values_skips_observation() {
        let mut values = vec![None; 7 * 48];
        for v in values.iter_mut().take(40) {
            *v = Some(0.3);
        }
        let curve = curve_starting_midnight(values);
        let obs = segment(&curve, 7).unwrap();
        let thr = compute_threshold(&obs[0], &DetectConfig::default());
        assert_eq!(thr.reason, Some(NoThresholdReason::TooFewSamples));
    }

    #[test]
    fn synthetic_week_threshold_falls_in_valley() {
        // Background Uniform(0.1, 0.4) with a nightly 4-interval 2.5 kW plateau.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut values: Vec<Option<f64>> =
            (0..7 * 48).map(|_| Some(rng.gen_range(0.1..0.4))).collect();
        for day in 0..7 {
            let start = day * 48 + 45; // 22:30 local
            for k in 0..4 {
                if start + k < values.len() {
                    values[start + k] = Some(2.5 + rng.gen_range(-0.05..0.05));
                }
            }
        }
        let curve = curve_starting_midnight(values);
        let obs = segment(&curve, 7).unwrap();
        let thr = compute_threshold(&obs[0], &DetectConfig::default());
        let t = thr
            .threshold_kw
            .expect("bimodal week must have a threshold");
        assert!(t > 0.5 && t < 2.2, "threshold {t}");
        // The threshold sits strictly inside the observation's power range.
        let present = obs[0].present_values();
        let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(t > lo && t < hi);
    }

    #[test]
    fn pure_noise_week_yields_no_usable_device_spikes() {
        // A noise-only observation may still get a threshold: at Scott
        // bandwidth the density of 336 uniform draws is usually wiggly
        // rather than unimodal, so the first valley can sit inside the
        // noise bulk. What matters downstream is that the resulting
        // pseudo-spikes stay far below the expected device band.
        let sched = nightly_schedule();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(43 + seed);
            let values: Vec<Option<f64>> =
                (0..7 * 48).map(|_| Some(rng.gen_range(0.1..0.4))).collect();
            let curve = curve_starting_midnight(values);
            let obs = segment(&curve, 7).unwrap();
            let thr = compute_threshold(&obs[0], &DetectConfig::default());
            if thr.threshold_kw.is_some() {
                let spikes = extract_spikes(&obs[0], &thr, &sched);
                for s in &spikes {
                    assert!(
                        s.peak_power_kw < 0.8,
                        "noise pseudo-spike reached {} kW (seed {seed})",
                        s.peak_power_kw
                    );
                }
            }
        }
    }

    #[test]
    fn spike_construction_with_background_correction() {
        // One run of 3 intervals at 2.8 kW over a 0.2 kW background,
        // starting exactly at the nightly off-peak start (22:30 = slot 45).
        let mut values = vec![Some(0.2); 7 * 48];
        for k in 45..48 {
            values[k] = Some(2.8);
        }
        let curve = curve_starting_midnight(values);
        let obs = segment(&curve, 7).unwrap();
        let thr = ObservationThreshold {
            observation: 0,
            threshold_kw: Some(1.0),
            reason: None,
        };
        let spikes = extract_spikes(&obs[0], &thr, &nightly_schedule());
        assert_eq!(spikes.len(), 1);
        let s = &spikes[0];
        assert_eq!(s.length, 3);
        assert_eq!(s.offset_min, 0);
        assert!((s.peak_power_kw - 2.6).abs() < 1e-12);
        assert!((s.background_kw - 0.2).abs() < 1e-12);
        assert!((s.energy_kwh - 3.0 * 2.6 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn run_at_observation_edge_uses_one_sided_background() {
        let mut values = vec![Some(0.2); 96];
        values[0] = Some(2.0);
        values[1] = Some(2.0);
        let curve = curve_starting_midnight(values);
        let obs = segment(&curve, 7).unwrap();
        let thr = ObservationThreshold {
            observation: 0,
            threshold_kw: Some(1.0),
            reason: None,
        };
        let spikes = extract_spikes(&obs[0], &thr, &nightly_schedule());
        assert_eq!(spikes.len(), 1);
        assert!((spikes[0].background_kw - 0.2).abs() < 1e-12);
        assert!((spikes[0].peak_power_kw - 1.8).abs() < 1e-12);
    }

    #[test]
    fn whole_observation_above_threshold_yields_no_spike() {
        let curve = curve_starting_midnight(vec![Some(2.0); 96]);
        let obs = segment(&curve, 7).unwrap();
        let thr = ObservationThreshold {
            observation: 0,
            threshold_kw: Some(1.0),
            reason: None,
        };
        assert!(extract_spikes(&obs[0], &thr, &nightly_schedule()).is_empty());
    }

    #[test]
    fn missing_value_terminates_run() {
        let mut values = vec![Some(0.2); 96];
        values[10] = Some(2.0);
        values[11] = None;
        values[12] = Some(2.0);
        let curve = curve_starting_midnight(values);
        let obs = segment(&curve, 7).unwrap();
        let thr = ObservationThreshold {
            observation: 0,
            threshold_kw: Some(1.0),
            reason: None,
        };
        let spikes = extract_spikes(&obs[0], &thr, &nightly_schedule());
        assert_eq!(spikes.len(), 2);
        assert_eq!(spikes[0].length, 1);
        assert_eq!(spikes[1].length, 1);
    }

    #[test]
    fn spikes_are_disjoint_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut values: Vec<Option<f64>> =
            (0..7 * 48).map(|_| Some(rng.gen_range(0.1..0.4))).collect();
        for start in [30usize, 100, 180, 250] {
            for k in 0..rng.gen_range(1..5) {
                values[start + k] = Some(rng.gen_range(2.0..3.0));
            }
        }
        let curve = curve_starting_midnight(values);
        let obs = segment(&curve, 7).unwrap();
        let thr = ObservationThreshold {
            observation: 0,
            threshold_kw: Some(1.0),
            reason: None,
        };
        let spikes = extract_spikes(&obs[0], &thr, &nightly_schedule());
        assert_eq!(spikes.len(), 4);
        for w in spikes.windows(2) {
            assert!(w[0].start_index + w[0].length <= w[1].start_index);
        }
    }

    #[test]
    fn raising_threshold_never_widens_spikes() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let values: Vec<Option<f64>> = (0..7 * 48)
            .map(|_| {
                if rng.gen_bool(0.05) {
                    None
                } else {
                    Some(rng.gen_range(0.0..3.0))
                }
            })
            .collect();
        let curve = curve_starting_midnight(values);
        let obs = segment(&curve, 7).unwrap();
        let sched = nightly_schedule();
        let lo = ObservationThreshold {
            observation: 0,
            threshold_kw: Some(1.0),
            reason: None,
        };
        let hi = ObservationThreshold {
            observation: 0,
            threshold_kw: Some(1.8),
            reason: None,
        };
        let spikes_lo = extract_spikes(&obs[0], &lo, &sched);
        let spikes_hi = extract_spikes(&obs[0], &hi, &sched);
        let count = |spikes: &[Spike]| spikes.iter().map(|s| s.length).sum::<usize>();
        assert!(count(&spikes_hi) <= count(&spikes_lo));
        // Every high-threshold spike fits inside some low-threshold one.
        for h in &spikes_hi {
            assert!(spikes_lo.iter().any(|l| {
                l.start_index <= h.start_index
                    && h.start_index + h.length <= l.start_index + l.length
            }));
        }
    }
}
