//! Batch runner: apply the pipeline to a directory of household CSVs and
//! aggregate detection fractions, power levels and consumption-fraction
//! distributions.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use chrono::Duration;
use chrono_tz::Tz;
use cwh_core::{
    attribute, consumption_fractions, detect_cwh, parse_load_curve, to_activations, DetectConfig,
    Error as CoreError, HouseholdMeta,
};
use serde::{Deserialize, Serialize};

/// Power classes of identified devices (kW boundaries).
pub const POWER_CLASS_BOUNDARIES_KW: [f64; 4] = [0.6, 1.5, 2.7, 3.3];

/// Fixed-bin histogram with half-open bins `[lo + i*w, lo + (i+1)*w)`;
/// values outside the range clamp into the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, bin_width: f64, bins: usize) -> Self {
        Self {
            lo,
            bin_width,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, value: f64) {
        let raw = ((value - self.lo) / self.bin_width).floor();
        let idx = (raw.max(0.0) as usize).min(self.counts.len() - 1);
        self.counts[idx] += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoMetadata,
    BadSchedule,
    ParseError,
    TooFewSamples,
    PipelineError,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SkipReason::NoMetadata => "no_metadata",
            SkipReason::BadSchedule => "bad_schedule",
            SkipReason::ParseError => "parse_error",
            SkipReason::TooFewSamples => "too_few_samples",
            SkipReason::PipelineError => "pipeline_error",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedHousehold {
    pub id: String,
    pub reason: SkipReason,
    pub detail: String,
}

/// Per-household row of the batch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRow {
    pub id: String,
    pub declared: String,
    pub found: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_kw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support: Option<usize>,
    pub activations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall_fraction: Option<f64>,
    pub cwh_kwh: f64,
    pub total_kwh: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub households: u64,
    pub detections: u64,
    pub detection_fraction: f64,
}

/// Whole-dataset aggregation written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub total_households: u64,
    pub processed: u64,
    pub skipped: BTreeMap<String, u64>,
    pub groups: BTreeMap<String, GroupStats>,
    /// Pooled attributed energy over pooled total energy.
    pub pooled_fraction: f64,
    pub pooled_cwh_kwh: f64,
    pub pooled_total_kwh: f64,
    pub power_class_boundaries_kw: Vec<f64>,
    /// Cluster mode powers of detected devices.
    pub power_histogram: Histogram,
    /// Per-household overall consumption fractions (detected households).
    pub overall_fraction_histogram: Histogram,
    /// Daily consumption fractions pooled across detected households.
    pub daily_fraction_histogram: Histogram,
    pub households: Vec<HouseholdRow>,
    pub skipped_households: Vec<SkippedHousehold>,
}

enum Outcome {
    Row(Box<HouseholdRow>, Option<f64>, Vec<f64>),
    Skip(SkippedHousehold),
}

#[allow(clippy::too_many_arguments)]
fn run_household(
    id: &str,
    path: &Path,
    metadata: &BTreeMap<String, HouseholdMeta>,
    tz: Tz,
    step: Duration,
    min_samples: usize,
    schedule_resolution_min: u32,
    strict_schedule: bool,
    config: &DetectConfig,
) -> Outcome {
    let skip = |reason, detail: String| {
        Outcome::Skip(SkippedHousehold {
            id: id.to_string(),
            reason,
            detail,
        })
    };
    let Some(meta) = metadata.get(id) else {
        return skip(SkipReason::NoMetadata, "no metadata entry".into());
    };
    let schedule = match meta.schedule(schedule_resolution_min, strict_schedule) {
        Ok(s) => s,
        Err(e) => return skip(SkipReason::BadSchedule, e.to_string()),
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return skip(SkipReason::ParseError, e.to_string()),
    };
    let curve = match parse_load_curve(&text, tz, step, id) {
        Ok(c) => c,
        Err(e) => return skip(SkipReason::ParseError, e.to_string()),
    };
    if curve.present_count() < min_samples {
        return skip(
            SkipReason::TooFewSamples,
            format!("{} present samples < {min_samples}", curve.present_count()),
        );
    }
    let result = match detect_cwh(&curve, &schedule, config) {
        Ok(r) => r,
        Err(e) => return skip(SkipReason::PipelineError, e.to_string()),
    };

    let attr = attribute(&curve, &result);
    let activations = to_activations(&result, curve.step());
    let (overall, daily, cwh_kwh, total_kwh) = match consumption_fractions(&curve, &attr) {
        Ok(f) => {
            let daily: Vec<f64> = f.daily.iter().map(|d| d.fraction).collect();
            (Some(f.overall), daily, f.cwh_kwh, f.total_kwh)
        }
        // A zero-energy curve has no defined fraction but still counts.
        Err(CoreError::UndefinedFraction) => (None, Vec::new(), 0.0, 0.0),
        Err(e) => return skip(SkipReason::PipelineError, e.to_string()),
    };

    let declared = meta
        .water_heating_type
        .map(|t| t.to_string())
        .unwrap_or_else(|| "unknown".to_string());
    Outcome::Row(
        Box::new(HouseholdRow {
            id: id.to_string(),
            declared,
            found: result.found,
            mode_kw: result.cluster.map(|c| c.mode_kw),
            support: result.cluster.map(|c| c.support),
            activations: activations.len(),
            overall_fraction: overall,
            cwh_kwh,
            total_kwh,
        }),
        overall,
        daily,
    )
}

/// Run the pipeline over every household CSV, in parallel, merging
/// results in household-id order.
#[allow(clippy::too_many_arguments)]
pub fn run_batch(
    files: &[(String, std::path::PathBuf)],
    metadata: &BTreeMap<String, HouseholdMeta>,
    tz: Tz,
    step: Duration,
    min_samples: usize,
    schedule_resolution_min: u32,
    strict_schedule: bool,
    config: &DetectConfig,
    workers: usize,
) -> anyhow::Result<BatchSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        use rayon::prelude::*;
        files
            .par_iter()
            .map(|(id, path)| {
                run_household(
                    id,
                    path,
                    metadata,
                    tz,
                    step,
                    min_samples,
                    schedule_resolution_min,
                    strict_schedule,
                    config,
                )
            })
            .collect()
    });

    let mut summary = BatchSummary {
        total_households: files.len() as u64,
        processed: 0,
        skipped: BTreeMap::new(),
        groups: BTreeMap::new(),
        pooled_fraction: 0.0,
        pooled_cwh_kwh: 0.0,
        pooled_total_kwh: 0.0,
        power_class_boundaries_kw: POWER_CLASS_BOUNDARIES_KW.to_vec(),
        power_histogram: Histogram::new(0.0, 0.1, 60),
        overall_fraction_histogram: Histogram::new(0.0, 0.02, 50),
        daily_fraction_histogram: Histogram::new(0.0, 0.02, 50),
        households: Vec::new(),
        skipped_households: Vec::new(),
    };

    for outcome in outcomes {
        match outcome {
            Outcome::Row(row, overall, daily) => {
                summary.processed += 1;
                let group = summary.groups.entry(row.declared.clone()).or_default();
                group.households += 1;
                if row.found {
                    group.detections += 1;
                    if let Some(mode) = row.mode_kw {
                        summary.power_histogram.add(mode);
                    }
                    if let Some(f) = overall {
                        summary.overall_fraction_histogram.add(f);
                    }
                    for f in daily {
                        summary.daily_fraction_histogram.add(f);
                    }
                }
                summary.pooled_cwh_kwh += row.cwh_kwh;
                summary.pooled_total_kwh += row.total_kwh;
                summary.households.push(*row);
            }
            Outcome::Skip(skip) => {
                *summary.skipped.entry(skip.reason.to_string()).or_insert(0) += 1;
                summary.skipped_households.push(skip);
            }
        }
    }
    for group in summary.groups.values_mut() {
        group.detection_fraction = if group.households > 0 {
            group.detections as f64 / group.households as f64
        } else {
            0.0
        };
    }
    summary.pooled_fraction = if summary.pooled_total_kwh > 0.0 {
        summary.pooled_cwh_kwh / summary.pooled_total_kwh
    } else {
        0.0
    };
    Ok(summary)
}

/// `id,declared,found,mode_kw,support,activations,overall_fraction` rows.
pub fn households_csv(summary: &BatchSummary) -> String {
    let mut out = String::from(
        "id,declared,found,mode_kw,support,activations,overall_fraction,cwh_kwh,total_kwh\n",
    );
    for row in &summary.households {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.id,
            row.declared,
            row.found,
            row.mode_kw.map(|v| v.to_string()).unwrap_or_default(),
            row.support.map(|v| v.to_string()).unwrap_or_default(),
            row.activations,
            row.overall_fraction
                .map(|v| v.to_string())
                .unwrap_or_default(),
            row.cwh_kwh,
            row.total_kwh
        ));
    }
    out
}
