//! Step two of the pipeline: filter off-peak-aligned spikes, cluster
//! their power levels and decide whether the household has an off-peak
//! triggered water heater.
//!
//! Spikes from all observations are pooled here (thresholds stay
//! per-observation). A fit succeeds when the aligned spike powers form a
//! cluster inside the expected device band with enough support; all
//! matching spikes are then attributed to the device. The method assumes
//! a single off-peak triggered device with a single power mode.

use serde::Serialize;

use crate::config::DetectConfig;
use crate::data::{segment, LoadCurve, OffPeakSchedule};
use crate::detector::{compute_threshold, extract_spikes, Spike};
use crate::error::Result;
use crate::kde::{evaluate_density, local_minima, scott_bandwidth, ValleyStrategy};

/// The accepted power band attributed to the device after the second
/// KDE step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerCluster {
    /// Lower edge of the band, kW (valley threshold or expected low).
    pub low_kw: f64,
    /// Upper edge of the band, kW (expected high).
    pub high_kw: f64,
    /// Density-peak abscissa within the band, kW.
    pub mode_kw: f64,
    /// Number of aligned spikes inside the band.
    pub support: usize,
}

/// Per-household verdict with labeled spikes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub household_id: String,
    pub found: bool,
    pub cluster: Option<PowerCluster>,
    /// Spikes attributed to the device (aligned and in-band).
    pub cwh_spikes: Vec<Spike>,
    /// Everything else.
    pub other_spikes: Vec<Spike>,
}

/// Spikes whose start coincides with an off-peak start, within the
/// configured tolerance (exact by default).
pub fn filter_aligned(spikes: &[Spike], tolerance_min: i64) -> Vec<Spike> {
    spikes
        .iter()
        .filter(|s| s.offset_min.abs() <= tolerance_min)
        .cloned()
        .collect()
}

/// Cluster aligned spike power levels with a second KDE.
///
/// The band's lower bound is the selected valley of the KDE when one
/// exists, otherwise the expected range's low edge; the upper bound is
/// the expected high edge. Returns `None` when fewer than `min_support`
/// aligned spikes land in the band or the density peak falls outside the
/// expected range.
pub fn find_power_cluster(
    aligned: &[Spike],
    expected: (f64, f64),
    min_support: usize,
    config: &DetectConfig,
) -> Option<PowerCluster> {
    let (expected_low, expected_high) = expected;
    debug_assert!(expected_low < expected_high);
    if aligned.is_empty() {
        return None;
    }
    let powers: Vec<f64> = aligned.iter().map(|s| s.peak_power_kw).collect();

    let (low_kw, mode_kw) = match scott_bandwidth(&powers) {
        Ok(h) => {
            let est = evaluate_density(&powers, h, config.grid_points)
                .expect("non-empty samples and positive bandwidth");
            // The device mode is the density peak inside the expected
            // band; the valley threshold bounds the cluster from below,
            // so only minima left of that peak qualify.
            let mode = est.argmax_in(expected_low, expected_high)?;
            let candidates: Vec<(f64, f64)> = local_minima(&est)
                .into_iter()
                .filter(|(x, _)| *x <= mode - config.valley_min_separation_kw)
                .collect();
            let valley = match config.valley_strategy {
                ValleyStrategy::FirstFromLeft => candidates.first().map(|(x, _)| *x),
                ValleyStrategy::LowestDensity => {
                    let mut best: Option<(f64, f64)> = None;
                    for (x, d) in candidates {
                        match best {
                            Some((_, bd)) if d >= bd => {}
                            _ => best = Some((x, d)),
                        }
                    }
                    best.map(|(x, _)| x)
                }
            };
            let low = valley.unwrap_or(expected_low).max(expected_low);
            (low, mode)
        }
        // All aligned spikes share one power level (or there is only
        // one); the level itself is the only candidate mode.
        Err(_) => (expected_low, powers[0]),
    };

    if !(mode_kw > expected_low && mode_kw < expected_high && mode_kw > low_kw) {
        return None;
    }
    let support = powers
        .iter()
        .filter(|p| **p >= low_kw && **p <= expected_high)
        .count();
    if support < min_support {
        return None;
    }
    Some(PowerCluster {
        low_kw,
        high_kw: expected_high,
        mode_kw,
        support,
    })
}

/// Label every spike: aligned and inside the cluster band means the
/// device, everything else is other consumption.
pub fn classify(
    household_id: &str,
    spikes: Vec<Spike>,
    cluster: Option<PowerCluster>,
    tolerance_min: i64,
) -> DetectionResult {
    let mut cwh_spikes = Vec::new();
    let mut other_spikes = Vec::new();
    match cluster {
        Some(c) => {
            for s in spikes {
                if s.offset_min.abs() <= tolerance_min
                    && s.peak_power_kw >= c.low_kw
                    && s.peak_power_kw <= c.high_kw
                {
                    cwh_spikes.push(s);
                } else {
                    other_spikes.push(s);
                }
            }
        }
        None => other_spikes = spikes,
    }
    // found <=> cluster present <=> cwh_spikes non-empty.
    let cluster = if cwh_spikes.is_empty() { None } else { cluster };
    DetectionResult {
        household_id: household_id.to_string(),
        found: cluster.is_some(),
        cluster,
        cwh_spikes,
        other_spikes,
    }
}

/// Full per-household pipeline: segment, threshold each observation,
/// extract spikes, filter on alignment, cluster power levels, label.
/// Deterministic for fixed inputs and config.
pub fn detect_cwh(
    curve: &LoadCurve,
    schedule: &OffPeakSchedule,
    config: &DetectConfig,
) -> Result<DetectionResult> {
    config.validate()?;
    let observations = segment(curve, config.window_days)?;
    let mut spikes: Vec<Spike> = Vec::new();
    for obs in &observations {
        let thr = compute_threshold(obs, config);
        spikes.extend(extract_spikes(obs, &thr, schedule));
    }

    let aligned = filter_aligned(&spikes, config.alignment_tolerance_min);
    let curve_days = (curve.len() as i64 * curve.step().num_seconds()) / 86_400;
    let cluster = find_power_cluster(
        &aligned,
        (config.expected_low_kw, config.expected_high_kw),
        config.min_support_for(curve_days),
        config,
    );
    Ok(classify(
        curve.household_id(),
        spikes,
        cluster,
        config.alignment_tolerance_min,
    ))
}
