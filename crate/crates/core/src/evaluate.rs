//! Validation against ground truth: interval-level confusion matrix at
//! the 100 W test and activation-level precision/recall.
//!
//! A ground-truth series carries the device's own power on the meter's
//! time base; sensor files at finer resolution are averaged into meter
//! intervals on ingestion. Precision and recall stay undefined (never 0
//! or 1) when their denominator is empty.

use chrono::{DateTime, Duration};
use chrono_tz::Tz;
use serde::Serialize;

use crate::disagg::{Activation, AttributionSeries};
use crate::error::{Error, Result};

/// Device power aligned with a load curve, kW per meter interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    start: DateTime<Tz>,
    step: Duration,
    values: Vec<f64>,
}

impl GroundTruth {
    pub fn new(start: DateTime<Tz>, step: Duration, values: Vec<f64>) -> Result<Self> {
        if step.num_seconds() <= 0 {
            return Err(Error::InvalidConfig("step must be positive".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ground-truth power must be finite and >= 0, got {bad}"
            )));
        }
        Ok(Self {
            start,
            step,
            values,
        })
    }

    pub fn start(&self) -> DateTime<Tz> {
        self.start
    }

    pub fn step(&self) -> Duration {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Tz> {
        self.start + self.step * i as i32
    }

    pub fn total_energy_kwh(&self) -> f64 {
        let step_h = self.step.num_seconds() as f64 / 3600.0;
        self.values.iter().sum::<f64>() * step_h
    }

    /// `timestamp,cwh_power_kw` rows at the meter step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,cwh_power_kw\n");
        for (i, v) in self.values.iter().enumerate() {
            let ts = self
                .timestamp(i)
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, false);
            out.push_str(&format!("{ts},{v}\n"));
        }
        out
    }

    /// Ingest a `timestamp,cwh_power_kw` CSV recorded at any resolution
    /// at or below the meter step, averaging samples into the given time
    /// base. Meter intervals without any sensor sample read zero.
    pub fn from_sensor_csv(
        csv_text: &str,
        start: DateTime<Tz>,
        step: Duration,
        len: usize,
    ) -> Result<Self> {
        let tz = start.timezone();
        let step_s = step.num_seconds();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(csv_text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Schema {
                line: 1,
                msg: e.to_string(),
            })?
            .clone();
        if headers.len() < 2
            || headers[0].trim() != "timestamp"
            || headers[1].trim() != "cwh_power_kw"
        {
            return Err(Error::Schema {
                line: 1,
                msg: "expected header `timestamp,cwh_power_kw`".into(),
            });
        }

        let mut sums = vec![0.0f64; len];
        let mut counts = vec![0u64; len];
        for record in reader.records() {
            let record = record.map_err(|e| Error::Schema {
                line: 0,
                msg: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let ts =
                crate::data::parse_any_timestamp(&record[0], tz).ok_or_else(|| Error::Schema {
                    line,
                    msg: format!("unparseable timestamp `{}`", &record[0]),
                })?;
            let p: f64 = record[1].trim().parse().map_err(|_| Error::Value {
                line,
                msg: format!("unparseable power `{}`", &record[1]),
            })?;
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Value {
                    line,
                    msg: format!("power must be finite and >= 0, got {p}"),
                });
            }
            let delta = (ts - start).num_seconds();
            if delta < 0 {
                continue; // sensor started before the meter window
            }
            let slot = (delta / step_s) as usize;
            if slot >= len {
                continue;
            }
            sums[slot] += p;
            counts[slot] += 1;
        }

        let values = sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        Self::new(start, step, values)
    }
}

/// Interval-level confusion counts with derived precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub true_positives: u64,
    pub true_negatives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    /// `tp / (tp + fp)`; absent when nothing was predicted positive.
    pub precision: Option<f64>,
    /// `tp / (tp + fn)`; absent when truth has no positives.
    pub recall: Option<f64>,
}

impl ConfusionMatrix {
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        Self {
            true_positives: tp,
            true_negatives: tn,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_positives + self.true_negatives + self.false_positives + self.false_negatives
    }
}

/// Per interval: predicted-positive iff `pred > threshold`,
/// truth-positive iff `truth > threshold` (the 100 W test by default).
pub fn interval_confusion(
    pred: &AttributionSeries,
    truth: &GroundTruth,
    threshold_kw: f64,
) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() || pred.start() != truth.start() || pred.step() != truth.step() {
        return Err(Error::Alignment(format!(
            "prediction ({} intervals from {}) vs truth ({} intervals from {})",
            pred.len(),
            pred.start(),
            truth.len(),
            truth.start()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (p, t) in pred.values().iter().zip(truth.values()) {
        match (*p > threshold_kw, *t > threshold_kw) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ConfusionMatrix::from_counts(tp, tn, fp, fn_))
}

/// Split of interval errors into those adjacent to a correctly detected
/// interval (trailing/leading edges of real activations) and isolated
/// ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeErrorSplit {
    pub fp_edge_adjacent: u64,
    pub fp_isolated: u64,
    pub fn_edge_adjacent: u64,
    pub fn_isolated: u64,
}

/// Classify each erroneous interval by whether one of its neighbors is a
/// true positive.
pub fn edge_error_split(
    pred: &AttributionSeries,
    truth: &GroundTruth,
    threshold_kw: f64,
) -> Result<EdgeErrorSplit> {
    if pred.len() != truth.len() || pred.start() != truth.start() || pred.step() != truth.step() {
        return Err(Error::Alignment(
            "prediction and truth differ in time base".into(),
        ));
    }
    let n = pred.len();
    let is_tp = |i: usize| pred.values()[i] > threshold_kw && truth.values()[i] > threshold_kw;
    let mut split = EdgeErrorSplit {
        fp_edge_adjacent: 0,
        fp_isolated: 0,
        fn_edge_adjacent: 0,
        fn_isolated: 0,
    };
    for i in 0..n {
        let p = pred.values()[i] > threshold_kw;
        let t = truth.values()[i] > threshold_kw;
        if p == t {
            continue;
        }
        let near_tp = (i > 0 && is_tp(i - 1)) || (i + 1 < n && is_tp(i + 1));
        match (p, near_tp) {
            (true, true) => split.fp_edge_adjacent += 1,
            (true, false) => split.fp_isolated += 1,
            (false, true) => split.fn_edge_adjacent += 1,
            (false, false) => split.fn_isolated += 1,
        }
    }
    Ok(split)
}

/// Maximal runs of truth power above the threshold, as activations.
/// The comparison is strict: an interval at exactly the threshold is not
/// active.
pub fn truth_activations(truth: &GroundTruth, threshold_kw: f64) -> Vec<Activation> {
    let step_min = truth.step().num_minutes();
    let step_h = truth.step().num_seconds() as f64 / 3600.0;
    let v = truth.values();
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        if v[i] <= threshold_kw {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] > threshold_kw {
            j += 1;
        }
        let run = &v[i..=j];
        let energy: f64 = run.iter().sum::<f64>() * step_h;
        let duration_min = run.len() as i64 * step_min;
        out.push(Activation {
            start: truth.timestamp(i),
            duration_min,
            mean_power_kw: energy / (duration_min as f64 / 60.0),
            peak_power_kw: run.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            energy_kwh: energy,
        });
        i = j + 1;
    }
    out
}

/// One matched (predicted, truth) activation pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub pred_index: usize,
    pub truth_index: usize,
    pub overlap_min: i64,
    pub pred_energy_kwh: f64,
    pub truth_energy_kwh: f64,
}

/// Activation-level scores with the matching used to compute them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivationMetrics {
    pub pred_count: usize,
    pub truth_count: usize,
    pub matched: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub matches: Vec<MatchedPair>,
}

fn overlap_minutes(a: &Activation, b: &Activation) -> i64 {
    let a_start = a.start;
    let a_end = a.start + Duration::minutes(a.duration_min);
    let b_start = b.start;
    let b_end = b.start + Duration::minutes(b.duration_min);
    let lo = a_start.max(b_start);
    let hi = a_end.min(b_end);
    (hi - lo).num_minutes()
}

/// Greedy one-to-one matching by temporal overlap: predictions are
/// walked chronologically and each takes the earliest unmatched truth
/// activation it overlaps. Both lists must be chronologically sorted.
pub fn activation_metrics(pred: &[Activation], truth: &[Activation]) -> ActivationMetrics {
    let mut taken = vec![false; truth.len()];
    let mut matches = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (ti, t) in truth.iter().enumerate() {
            if taken[ti] {
                continue;
            }
            let overlap = overlap_minutes(p, t);
            if overlap > 0 {
                taken[ti] = true;
                matches.push(MatchedPair {
                    pred_index: pi,
                    truth_index: ti,
                    overlap_min: overlap,
                    pred_energy_kwh: p.energy_kwh,
                    truth_energy_kwh: t.energy_kwh,
                });
                break;
            }
        }
    }
    let matched = matches.len();
    ActivationMetrics {
        pred_count: pred.len(),
        truth_count: truth.len(),
        matched,
        precision: (!pred.is_empty()).then(|| matched as f64 / pred.len() as f64),
        recall: (!truth.is_empty()).then(|| matched as f64 / truth.len() as f64),
        matches,
    }
}

/// Full evaluation artifact: interval confusion (with edge/isolated
/// split), activation metrics and per-pair energy scatter data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub threshold_kw: f64,
    pub confusion: ConfusionMatrix,
    pub edge_errors: EdgeErrorSplit,
    pub activation: ActivationMetrics,
}

pub fn evaluate(
    pred: &AttributionSeries,
    truth: &GroundTruth,
    threshold_kw: f64,
) -> Result<EvaluationReport> {
    let confusion = interval_confusion(pred, truth, threshold_kw)?;
    let edge_errors = edge_error_split(pred, truth, threshold_kw)?;
    let pred_acts = {
        // The attribution series is its own activation source here: runs
        // of attributed power above the threshold.
        let as_truth = GroundTruth::new(pred.start(), pred.step(), pred.values().to_vec())?;
        truth_activations(&as_truth, threshold_kw)
    };
    let truth_acts = truth_activations(truth, threshold_kw);
    let activation = activation_metrics(&pred_acts, &truth_acts);
    Ok(EvaluationReport {
        threshold_kw,
        confusion,
        edge_errors,
        activation,
    })
}
