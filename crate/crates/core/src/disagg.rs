//! Convert labeled spikes into activations, per-interval device power
//! attribution, and daily/overall consumption fractions.
//!
//! "Daily" follows civil days in the curve's timezone, because off-peak
//! schedules are local-time based. Per-interval attribution reuses each
//! spike's single background estimate; it is the only background the
//! extraction step defines.

use chrono::{DateTime, Duration, NaiveDate};
use chrono_tz::Tz;
use serde::Serialize;

use crate::classifier::DetectionResult;
use crate::data::LoadCurve;
use crate::error::{Error, Result};

/// A contiguous period during which the device draws power.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Activation {
    pub start: DateTime<Tz>,
    pub duration_min: i64,
    pub mean_power_kw: f64,
    pub peak_power_kw: f64,
    pub energy_kwh: f64,
}

/// Per-interval device power on the same time base as the source curve
/// (zero outside attributed spikes).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionSeries {
    start: DateTime<Tz>,
    step: Duration,
    values: Vec<f64>,
}

impl AttributionSeries {
    pub fn new(start: DateTime<Tz>, step: Duration, values: Vec<f64>) -> Result<Self> {
        if step.num_seconds() <= 0 {
            return Err(Error::InvalidConfig("step must be positive".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "attributed power must be finite and >= 0, got {bad}"
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

    /// `timestamp,cwh_power_kw` rows, the same schema ground-truth files
    /// use, so an attribution dump can feed the evaluation directly.
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

    /// Parse a `timestamp,cwh_power_kw` CSV back into a series. Rows must
    /// sit on the sampling grid; absent slots read zero (no attribution).
    pub fn from_csv(csv_text: &str, tz: chrono_tz::Tz, step: Duration) -> Result<Self> {
        let (start, values) = crate::data::parse_grid_csv(csv_text, tz, step, "cwh_power_kw")?;
        Self::new(
            start,
            step,
            values.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        )
    }
}

/// One activation per attributed spike, chronologically sorted; empty
/// when nothing was found.
pub fn to_activations(result: &DetectionResult, step: Duration) -> Vec<Activation> {
    let step_min = step.num_minutes();
    let mut activations: Vec<Activation> = result
        .cwh_spikes
        .iter()
        .map(|s| {
            let duration_min = s.length as i64 * step_min;
            let duration_h = duration_min as f64 / 60.0;
            Activation {
                start: s.start,
                duration_min,
                mean_power_kw: s.energy_kwh / duration_h,
                peak_power_kw: s.peak_power_kw,
                energy_kwh: s.energy_kwh,
            }
        })
        .collect();
    activations.sort_by_key(|a| a.start);
    activations
}

/// Per-interval attribution: raw power minus the spike's background,
/// clamped to `[0, raw]`, inside attributed spikes; zero elsewhere.
pub fn attribute(curve: &LoadCurve, result: &DetectionResult) -> AttributionSeries {
    let mut values = vec![0.0; curve.len()];
    for s in &result.cwh_spikes {
        let end = (s.start_index + s.length).min(curve.len());
        let raws = &curve.values()[s.start_index..end];
        for (v, raw) in values[s.start_index..end].iter_mut().zip(raws) {
            if let Some(raw) = raw {
                *v = (raw - s.background_kw).clamp(0.0, *raw);
            }
        }
    }
    AttributionSeries {
        start: curve.start(),
        step: curve.step(),
        values,
    }
}

/// One civil day of the fraction report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayFraction {
    pub date: NaiveDate,
    pub fraction: f64,
    pub cwh_kwh: f64,
    pub total_kwh: f64,
}

/// Daily and overall consumption fractions due to the attributed device.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsumptionFractions {
    pub daily: Vec<DayFraction>,
    pub overall: f64,
    pub cwh_kwh: f64,
    pub total_kwh: f64,
}

/// Group attributed and total energy by civil day (curve timezone).
/// Days with zero total energy are absent rather than reported as 0/0;
/// a zero-total curve is an error.
pub fn consumption_fractions(
    curve: &LoadCurve,
    attr: &AttributionSeries,
) -> Result<ConsumptionFractions> {
    if curve.len() != attr.len() || curve.start() != attr.start() || curve.step() != attr.step() {
        return Err(Error::Alignment(
            "attribution series does not match its curve".into(),
        ));
    }
    let step_h = curve.step().num_seconds() as f64 / 3600.0;

    let mut daily: Vec<DayFraction> = Vec::new();
    for i in 0..curve.len() {
        let date = curve.timestamp(i).date_naive();
        if daily.last().map(|d| d.date) != Some(date) {
            daily.push(DayFraction {
                date,
                fraction: 0.0,
                cwh_kwh: 0.0,
                total_kwh: 0.0,
            });
        }
        let day = daily.last_mut().expect("just pushed");
        if let Some(raw) = curve.values()[i] {
            day.total_kwh += raw * step_h;
            day.cwh_kwh += attr.values()[i] * step_h;
        }
    }

    let total_kwh: f64 = daily.iter().map(|d| d.total_kwh).sum();
    let cwh_kwh: f64 = daily.iter().map(|d| d.cwh_kwh).sum();
    if total_kwh <= 0.0 {
        return Err(Error::UndefinedFraction);
    }

    daily.retain(|d| d.total_kwh > 0.0);
    for d in &mut daily {
        d.fraction = d.cwh_kwh / d.total_kwh;
    }

    Ok(ConsumptionFractions {
        daily,
        overall: cwh_kwh / total_kwh,
        cwh_kwh,
        total_kwh,
    })
}

/// `date,daily_fraction,daily_cwh_kwh,daily_total_kwh` rows plus a final
/// `overall` summary row.
pub fn fractions_to_csv(fractions: &ConsumptionFractions) -> String {
    let mut out = String::from("date,daily_fraction,daily_cwh_kwh,daily_total_kwh\n");
    for d in &fractions.daily {
        out.push_str(&format!(
            "{},{},{},{}\n",
            d.date, d.fraction, d.cwh_kwh, d.total_kwh
        ));
    }
    out.push_str(&format!(
        "overall,{},{},{}\n",
        fractions.overall, fractions.cwh_kwh, fractions.total_kwh
    ));
    out
}
