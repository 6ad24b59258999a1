//! Load-curve and off-peak-schedule data model, CSV ingestion and
//! observation windowing.
//!
//! A [`LoadCurve`] is an evenly spaced average-power series for one
//! household. Gaps in the source CSV are materialized as missing values
//! rather than zero-filled: a missing sample carries no information and
//! must not fabricate spike edges downstream. Off-peak hours are daily
//! local-time intervals ([`OffPeakSchedule`]); an interval may wrap past
//! midnight, in which case it keeps its true start (the instant a
//! pilot-wire contactor would fire).

use std::collections::BTreeMap;
use std::ops::Range;

use chrono::{DateTime, Duration, LocalResult, NaiveDateTime, NaiveTime, TimeZone};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evenly spaced average-power time series for one household, in kW.
///
/// The timestamp of sample `i` is `start + i * step` in real (instant)
/// time, so the series stays evenly spaced across DST transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadCurve {
    household_id: String,
    start: DateTime<Tz>,
    step: Duration,
    values: Vec<Option<f64>>,
}

impl LoadCurve {
    pub fn new(
        household_id: impl Into<String>,
        start: DateTime<Tz>,
        step: Duration,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        if step.num_seconds() <= 0 {
            return Err(Error::InvalidConfig("step must be positive".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if let Some(p) = v {
                if !p.is_finite() || *p < 0.0 {
                    return Err(Error::Value {
                        line: i as u64 + 2,
                        msg: format!("power must be finite and >= 0, got {p}"),
                    });
                }
            }
        }
        Ok(Self {
            household_id: household_id.into(),
            start,
            step,
            values,
        })
    }

    pub fn household_id(&self) -> &str {
        &self.household_id
    }

    pub fn start(&self) -> DateTime<Tz> {
        self.start
    }

    pub fn step(&self) -> Duration {
        self.step
    }

    pub fn step_minutes(&self) -> i64 {
        self.step.num_minutes()
    }

    pub fn timezone(&self) -> Tz {
        self.start.timezone()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Instant of sample `i`.
    pub fn timestamp(&self, i: usize) -> DateTime<Tz> {
        self.start + self.step * i as i32
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        1.0 - self.present_count() as f64 / self.values.len() as f64
    }

    /// Sum of present samples times the step, in kWh.
    pub fn total_energy_kwh(&self) -> f64 {
        let step_h = self.step.num_seconds() as f64 / 3600.0;
        self.values.iter().flatten().sum::<f64>() * step_h
    }

    /// Serialize back to the `timestamp,power_kw` CSV schema. Missing
    /// samples become empty power fields; re-parsing the output yields an
    /// identical curve.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,power_kw\n");
        for (i, v) in self.values.iter().enumerate() {
            let ts = self
                .timestamp(i)
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, false);
            match v {
                Some(p) => out.push_str(&format!("{ts},{p}\n")),
                None => out.push_str(&format!("{ts},\n")),
            }
        }
        out
    }
}

pub(crate) fn parse_any_timestamp(s: &str, tz: Tz) -> Option<DateTime<Tz>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&tz));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            // An ambiguous wall-clock time (DST fall-back) resolves to the
            // earlier instant; a nonexistent one is a schema error upstream.
            return tz.from_local_datetime(&naive).earliest();
        }
    }
    None
}

/// Parse a two-column grid CSV (`timestamp,<value_header>`): rows must
/// land on the grid defined by the first row and `step`, strictly
/// increasing, no duplicates; slots without a row (and rows with an
/// empty value field) are `None`.
pub(crate) fn parse_grid_csv(
    csv_text: &str,
    tz: Tz,
    step: Duration,
    value_header: &str,
) -> Result<(DateTime<Tz>, Vec<Option<f64>>)> {
    if step.num_seconds() <= 0 {
        return Err(Error::InvalidConfig("step must be positive".into()));
    }
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
    if headers.len() < 2 || headers[0].trim() != "timestamp" || headers[1].trim() != value_header {
        return Err(Error::Schema {
            line: 1,
            msg: format!(
                "expected header `timestamp,{value_header}`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let step_s = step.num_seconds();
    let mut start: Option<DateTime<Tz>> = None;
    let mut values: Vec<Option<f64>> = Vec::new();
    let mut last_slot: i64 = -1;

    for record in reader.records() {
        let record = record.map_err(|e| Error::Schema {
            line: 0,
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() < 2 {
            return Err(Error::Schema {
                line,
                msg: "expected two fields".into(),
            });
        }
        let ts = parse_any_timestamp(&record[0], tz).ok_or_else(|| Error::Schema {
            line,
            msg: format!("unparseable timestamp `{}`", &record[0]),
        })?;

        let power = match record[1].trim() {
            "" => None,
            raw => {
                let p: f64 = raw.parse().map_err(|_| Error::Value {
                    line,
                    msg: format!("unparseable power `{raw}`"),
                })?;
                if !p.is_finite() {
                    return Err(Error::Value {
                        line,
                        msg: format!("power must be finite, got {p}"),
                    });
                }
                if p < 0.0 {
                    return Err(Error::Value {
                        line,
                        msg: format!("power must be >= 0, got {p}"),
                    });
                }
                Some(p)
            }
        };

        let anchor = *start.get_or_insert(ts);
        let delta_s = (ts - anchor).num_seconds();
        if delta_s % step_s != 0 {
            return Err(Error::Schema {
                line,
                msg: format!("timestamp off the {}-minute grid", step.num_minutes()),
            });
        }
        let slot = delta_s / step_s;
        if slot == last_slot {
            return Err(Error::Schema {
                line,
                msg: "duplicate timestamp".into(),
            });
        }
        if slot < last_slot {
            return Err(Error::Schema {
                line,
                msg: "timestamps not increasing".into(),
            });
        }
        while (values.len() as i64) < slot {
            values.push(None);
        }
        values.push(power);
        last_slot = slot;
    }

    let start = start.ok_or(Error::EmptyInput("CSV has no data rows"))?;
    Ok((start, values))
}

/// Parse a `timestamp,power_kw` CSV into a [`LoadCurve`].
///
/// Timestamps may carry an offset (RFC 3339) or be naive local times
/// interpreted in `tz`. Rows must land on the grid defined by the first
/// row and `step`; grid slots without a row become missing values. An
/// empty power field is a missing value.
pub fn parse_load_curve(
    csv_text: &str,
    tz: Tz,
    step: Duration,
    household_id: &str,
) -> Result<LoadCurve> {
    let (start, values) = parse_grid_csv(csv_text, tz, step, "power_kw").map_err(|e| match e {
        Error::EmptyInput(_) => Error::EmptyInput("load curve CSV has no rows"),
        other => other,
    })?;
    LoadCurve::new(household_id, start, step, values)
}

/// One daily off-peak interval, as minutes after local midnight. The
/// interval may wrap past midnight (`start + duration > 24 h`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffPeakInterval {
    pub start_min: u32,
    pub duration_min: u32,
}

impl OffPeakInterval {
    /// End of the interval on the 24 h circle.
    pub fn end_min(&self) -> u32 {
        (self.start_min + self.duration_min) % 1440
    }
}

/// Daily off-peak hour ranges for one household, local-time based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffPeakSchedule {
    intervals: Vec<OffPeakInterval>,
    resolution_min: u32,
}

impl OffPeakSchedule {
    /// Validate and build a schedule. `strict` additionally enforces a
    /// total duration of exactly eight hours.
    pub fn new(intervals: Vec<OffPeakInterval>, resolution_min: u32, strict: bool) -> Result<Self> {
        if intervals.is_empty() || intervals.len() > 3 {
            return Err(Error::InvalidSchedule(format!(
                "expected 1 to 3 off-peak intervals, got {}",
                intervals.len()
            )));
        }
        if resolution_min == 0 || 1440 % resolution_min != 0 {
            return Err(Error::InvalidSchedule(format!(
                "resolution must divide 24 h, got {resolution_min} min"
            )));
        }
        let slots = (1440 / resolution_min) as usize;
        let mut occupied = vec![false; slots];
        for iv in &intervals {
            if iv.start_min >= 1440 {
                return Err(Error::InvalidSchedule(format!(
                    "start {} min is not a time of day",
                    iv.start_min
                )));
            }
            if iv.duration_min == 0 || iv.duration_min >= 1440 {
                return Err(Error::InvalidSchedule(format!(
                    "duration {} min out of range",
                    iv.duration_min
                )));
            }
            if iv.start_min % resolution_min != 0 || iv.duration_min % resolution_min != 0 {
                return Err(Error::InvalidSchedule(format!(
                    "interval {}+{} min not aligned to {} min resolution",
                    iv.start_min, iv.duration_min, resolution_min
                )));
            }
            for k in 0..(iv.duration_min / resolution_min) {
                let slot = ((iv.start_min / resolution_min + k) as usize) % slots;
                if occupied[slot] {
                    return Err(Error::InvalidSchedule(
                        "intervals overlap on the 24 h circle".into(),
                    ));
                }
                occupied[slot] = true;
            }
        }
        Ok(Self {
            intervals,
            resolution_min,
        })
        .and_then(|s| {
            if strict && s.total_minutes() != 480 {
                Err(Error::InvalidSchedule(format!(
                    "strict mode requires exactly 480 off-peak minutes, got {}",
                    s.total_minutes()
                )))
            } else {
                Ok(s)
            }
        })
    }

    /// Parse `HH:MM-HH:MM` range strings; a range whose end is at or
    /// before its start wraps past midnight.
    pub fn parse_ranges<S: AsRef<str>>(
        ranges: &[S],
        resolution_min: u32,
        strict: bool,
    ) -> Result<Self> {
        let mut intervals = Vec::with_capacity(ranges.len());
        for r in ranges {
            let r = r.as_ref().trim();
            let (a, b) = r.split_once('-').ok_or_else(|| {
                Error::InvalidSchedule(format!("expected `HH:MM-HH:MM`, got `{r}`"))
            })?;
            let start_min = parse_hhmm(a)?;
            let end_min = parse_hhmm(b)?;
            let duration_min = (end_min + 1440 - start_min) % 1440;
            if duration_min == 0 {
                return Err(Error::InvalidSchedule(format!("empty range `{r}`")));
            }
            intervals.push(OffPeakInterval {
                start_min,
                duration_min,
            });
        }
        Self::new(intervals, resolution_min, strict)
    }

    pub fn intervals(&self) -> &[OffPeakInterval] {
        &self.intervals
    }

    pub fn resolution_min(&self) -> u32 {
        self.resolution_min
    }

    pub fn total_minutes(&self) -> u32 {
        self.intervals.iter().map(|iv| iv.duration_min).sum()
    }

    /// Render back to `HH:MM-HH:MM` strings (wrapped ranges stay single).
    pub fn to_range_strings(&self) -> Vec<String> {
        self.intervals
            .iter()
            .map(|iv| format!("{}-{}", fmt_hhmm(iv.start_min), fmt_hhmm(iv.end_min())))
            .collect()
    }

    /// Non-wrapping `(start_min, end_min)` pairs with `start < end <= 1440`;
    /// a midnight-wrapping interval is split in two.
    pub fn day_splits(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for iv in &self.intervals {
            let end = iv.start_min + iv.duration_min;
            if end <= 1440 {
                out.push((iv.start_min, end));
            } else {
                out.push((iv.start_min, 1440));
                out.push((0, end - 1440));
            }
        }
        out
    }

    /// Largest gap in minutes between consecutive starts on the 24 h circle.
    pub fn max_start_gap_min(&self) -> u32 {
        let mut starts: Vec<u32> = self.intervals.iter().map(|iv| iv.start_min).collect();
        starts.sort_unstable();
        if starts.len() == 1 {
            return 1440;
        }
        let mut max_gap = 0;
        for i in 0..starts.len() {
            let next = if i + 1 < starts.len() {
                starts[i + 1]
            } else {
                starts[0] + 1440
            };
            max_gap = max_gap.max(next - starts[i]);
        }
        max_gap
    }

    /// All start instants on the local days surrounding `t` (previous,
    /// same, next). DST fall-back duplicates a wall-clock start, so both
    /// instants are returned; a spring-forward start that does not exist
    /// is skipped.
    pub fn start_instants_near(&self, t: &DateTime<Tz>) -> Vec<DateTime<Tz>> {
        let tz = t.timezone();
        let date = t.date_naive();
        let mut out = Vec::new();
        for d in -1i64..=1 {
            let Some(day) = date.checked_add_signed(Duration::days(d)) else {
                continue;
            };
            for iv in &self.intervals {
                let time = NaiveTime::from_num_seconds_from_midnight_opt(iv.start_min * 60, 0)
                    .expect("start_min < 1440 is validated");
                match tz.from_local_datetime(&day.and_time(time)) {
                    LocalResult::Single(x) => out.push(x),
                    LocalResult::Ambiguous(a, b) => {
                        out.push(a);
                        out.push(b);
                    }
                    LocalResult::None => {}
                }
            }
        }
        out
    }
}

fn parse_hhmm(s: &str) -> Result<u32> {
    let (h, m) = s
        .trim()
        .split_once(':')
        .ok_or_else(|| Error::InvalidSchedule(format!("expected `HH:MM`, got `{s}`")))?;
    let h: u32 = h
        .parse()
        .map_err(|_| Error::InvalidSchedule(format!("bad hour in `{s}`")))?;
    let m: u32 = m
        .parse()
        .map_err(|_| Error::InvalidSchedule(format!("bad minute in `{s}`")))?;
    if h > 24 || m > 59 || (h == 24 && m != 0) {
        return Err(Error::InvalidSchedule(format!(
            "`{s}` is not a time of day"
        )));
    }
    Ok((h * 60 + m) % 1440)
}

fn fmt_hhmm(min: u32) -> String {
    format!("{:02}:{:02}", min / 60, min % 60)
}

/// Signed minutes from `t` to the nearest off-peak start, searching past
/// and future occurrences across day boundaries. Positive when `t` is
/// after the start; ties break toward the past occurrence.
pub fn offset_to_nearest_start(t: &DateTime<Tz>, schedule: &OffPeakSchedule) -> i64 {
    let mut best: Option<i64> = None;
    for occ in schedule.start_instants_near(t) {
        let d = (*t - occ).num_seconds();
        let better = match best {
            None => true,
            Some(b) => d.abs() < b.abs() || (d.abs() == b.abs() && d > b),
        };
        if better {
            best = Some(d);
        }
    }
    best.expect("schedule has at least one interval") / 60
}

/// Like [`offset_to_nearest_start`], but each occurrence is first rounded
/// to the sampling grid (`anchor + k * step`, half-step rounds up). Spike
/// starts always sit on the grid, so alignment tests compare like with
/// like even when the schedule is declared at a finer resolution.
pub fn offset_to_nearest_start_on_grid(
    t: &DateTime<Tz>,
    schedule: &OffPeakSchedule,
    anchor: &DateTime<Tz>,
    step: Duration,
) -> i64 {
    let step_s = step.num_seconds();
    let mut best: Option<i64> = None;
    for occ in schedule.start_instants_near(t) {
        let k = ((occ - *anchor).num_seconds() + step_s / 2).div_euclid(step_s);
        let snapped = *anchor + step * k as i32;
        let d = (*t - snapped).num_seconds();
        let better = match best {
            None => true,
            Some(b) => d.abs() < b.abs() || (d.abs() == b.abs() && d > b),
        };
        if better {
            best = Some(d);
        }
    }
    best.expect("schedule has at least one interval") / 60
}

/// A contiguous slice of one load curve, processed independently by the
/// thresholding step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    curve: &'a LoadCurve,
    index: usize,
    range_start: usize,
    range_end: usize,
}

impl<'a> Observation<'a> {
    pub fn curve(&self) -> &'a LoadCurve {
        self.curve
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Index range within the parent curve.
    pub fn range(&self) -> Range<usize> {
        self.range_start..self.range_end
    }

    pub fn len(&self) -> usize {
        self.range_end - self.range_start
    }

    pub fn is_empty(&self) -> bool {
        self.range_start == self.range_end
    }

    pub fn values(&self) -> &'a [Option<f64>] {
        &self.curve.values()[self.range_start..self.range_end]
    }

    pub fn present_values(&self) -> Vec<f64> {
        self.values().iter().flatten().copied().collect()
    }

    /// Instant of local sample `i` (relative to the observation).
    pub fn timestamp(&self, i: usize) -> DateTime<Tz> {
        self.curve.timestamp(self.range_start + i)
    }
}

/// Split a curve into consecutive windows of `window_days`. A trailing
/// partial window is kept if it spans at least one day, otherwise it is
/// merged into the previous window. A curve shorter than one window is a
/// single observation.
pub fn segment(curve: &LoadCurve, window_days: u32) -> Result<Vec<Observation<'_>>> {
    if curve.is_empty() {
        return Err(Error::EmptyInput("cannot segment an empty load curve"));
    }
    if window_days == 0 {
        return Err(Error::InvalidConfig(
            "window must be at least one day".into(),
        ));
    }
    let day_len = (86_400 / curve.step().num_seconds()).max(1) as usize;
    let window = window_days as usize * day_len;
    let n = curve.len();
    let full = n / window;
    let rem = n % window;

    let mut bounds: Vec<Range<usize>> = (0..full).map(|w| w * window..(w + 1) * window).collect();
    if full == 0 {
        bounds.push(0..n);
    } else if rem >= day_len {
        bounds.push(full * window..n);
    } else if rem > 0 {
        bounds.last_mut().expect("full > 0").end = n;
    }

    Ok(bounds
        .into_iter()
        .enumerate()
        .map(|(index, r)| Observation {
            curve,
            index,
            range_start: r.start,
            range_end: r.end,
        })
        .collect())
}

/// Self-declared water heating type from household metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaterHeatingType {
    Elec,
    Gas,
    Other,
}

impl std::fmt::Display for WaterHeatingType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WaterHeatingType::Elec => write!(f, "elec"),
            WaterHeatingType::Gas => write!(f, "gas"),
            WaterHeatingType::Other => write!(f, "other"),
        }
    }
}

/// Per-household metadata: off-peak ranges plus optional declared fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdMeta {
    /// Off-peak ranges as `HH:MM-HH:MM` strings (end <= start wraps).
    pub off_peak: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub water_heating_type: Option<WaterHeatingType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface_m2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inhabitants: Option<u32>,
}

impl HouseholdMeta {
    pub fn schedule(&self, resolution_min: u32, strict: bool) -> Result<OffPeakSchedule> {
        OffPeakSchedule::parse_ranges(&self.off_peak, resolution_min, strict)
    }
}

/// Metadata file for a batch dataset: household id to metadata, ordered.
pub type MetadataFile = BTreeMap<String, HouseholdMeta>;
