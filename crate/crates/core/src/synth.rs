//! Synthetic household generator with embedded device ground truth, plus
//! the dataset anonymization transform.
//!
//! A scenario builds a load curve as background + device + confounders.
//! The background is a base level with a diurnal shape and nonnegative
//! (folded-normal) noise, so curves stay physical. When a water heater is
//! configured, every off-peak start triggers a plateau of the configured
//! power unless that night is skipped; an optional short re-activation
//! can fire late in the off-peak window (an early shower), which is the
//! known recall-loss case. The ground-truth series contains exactly the
//! device component.
//!
//! Generation is deterministic per seed, and each component draws from
//! its own RNG stream so toggling one leaves the others untouched.

use std::str::FromStr;

use chrono::{Duration, NaiveDate, TimeZone, Timelike};
use chrono_tz::Tz;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::LoadCurve;
use crate::error::{Error, Result};
use crate::evaluate::GroundTruth;

/// Background consumption model: a base level, a diurnal activity
/// component (envelope times random activity, so the marginal stays
/// base-heavy with a decaying tail like real homes) and folded noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundConfig {
    pub base_kw: f64,
    /// Peak of the diurnal activity envelope above the base.
    pub diurnal_amplitude_kw: f64,
    pub noise_kw: f64,
}

/// Off-peak triggered water heater model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwhConfig {
    pub power_kw: f64,
    pub mean_duration_intervals: u32,
    #[serde(default)]
    pub duration_jitter_intervals: u32,
    /// Probability that a given off-peak start does not trigger.
    #[serde(default)]
    pub skip_probability: f64,
    /// Probability of a 1-interval re-activation late in the window.
    #[serde(default)]
    pub morning_reactivation_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfounderAlignment {
    /// Uniformly random position in the curve.
    Random,
    /// Starts exactly at an off-peak start of a random day.
    OffPeakStart,
}

/// Another appliance producing spikes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfounderConfig {
    pub power_kw: f64,
    pub rate_per_day: f64,
    pub alignment: ConfounderAlignment,
}

/// Complete description of one synthetic household.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub household_id: String,
    /// First local midnight of the curve.
    pub start_date: NaiveDate,
    #[serde(default = "default_tz")]
    pub tz: String,
    pub days: u32,
    #[serde(default = "default_step_min")]
    pub step_min: u32,
    /// Off-peak ranges as `HH:MM-HH:MM` strings.
    pub off_peak: Vec<String>,
    pub background: BackgroundConfig,
    #[serde(default)]
    pub cwh: Option<CwhConfig>,
    #[serde(default)]
    pub confounders: Vec<ConfounderConfig>,
    pub seed: u64,
}

fn default_tz() -> String {
    "Europe/Paris".into()
}

fn default_step_min() -> u32 {
    30
}

impl ScenarioConfig {
    pub fn timezone(&self) -> Result<Tz> {
        Tz::from_str(&self.tz)
            .map_err(|_| Error::InvalidConfig(format!("unknown timezone `{}`", self.tz)))
    }

    pub fn validate(&self) -> Result<()> {
        self.timezone()?;
        if self.days == 0 {
            return Err(Error::InvalidConfig(
                "scenario needs at least one day".into(),
            ));
        }
        if self.step_min == 0 || 1440 % self.step_min != 0 {
            return Err(Error::InvalidConfig(format!(
                "step {} min must divide a day",
                self.step_min
            )));
        }
        let b = &self.background;
        for (name, v) in [
            ("base", b.base_kw),
            ("diurnal amplitude", b.diurnal_amplitude_kw),
            ("noise", b.noise_kw),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "background {name} must be >= 0, got {v}"
                )));
            }
        }
        if let Some(c) = &self.cwh {
            if !(c.power_kw.is_finite() && c.power_kw >= 0.0) {
                return Err(Error::InvalidConfig("cwh power must be >= 0".into()));
            }
            if c.mean_duration_intervals == 0 {
                return Err(Error::InvalidConfig(
                    "cwh duration must be >= 1 interval".into(),
                ));
            }
            for (name, p) in [
                ("skip probability", c.skip_probability),
                (
                    "morning reactivation probability",
                    c.morning_reactivation_probability,
                ),
            ] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidConfig(format!(
                        "{name} must be in [0, 1], got {p}"
                    )));
                }
            }
        }
        for c in &self.confounders {
            if !(c.power_kw.is_finite() && c.power_kw >= 0.0) {
                return Err(Error::InvalidConfig("confounder power must be >= 0".into()));
            }
            if !(c.rate_per_day.is_finite() && c.rate_per_day >= 0.0) {
                return Err(Error::InvalidConfig("confounder rate must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Energy bookkeeping of a generated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioTruth {
    pub household_id: String,
    pub seed: u64,
    pub background_kwh: f64,
    pub cwh_kwh: f64,
    pub confounder_kwh: f64,
    pub total_kwh: f64,
    /// Injected device share of total energy.
    pub cwh_share: f64,
    /// Number of maximal positive runs in the ground truth.
    pub injected_activations: usize,
    pub cwh_power_kw: Option<f64>,
}

// Separate RNG streams per component.
const STREAM_BACKGROUND: u64 = 0;
const STREAM_CWH: u64 = 1;
const STREAM_CONFOUNDERS: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Diurnal multiplier in [0, 1]: low around 05:00 local, high around
/// 17:00.
fn diurnal_shape(seconds_of_day: u32) -> f64 {
    let f = seconds_of_day as f64 / 86_400.0;
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * (f - 5.0 / 24.0)).cos())
}

/// Generate the load curve, its ground truth and the energy bookkeeping.
pub fn generate(config: &ScenarioConfig) -> Result<(LoadCurve, GroundTruth, ScenarioTruth)> {
    config.validate()?;
    let tz = config.timezone()?;
    let schedule =
        crate::data::OffPeakSchedule::parse_ranges(&config.off_peak, config.step_min, false)?;

    let start = tz
        .from_local_datetime(
            &config
                .start_date
                .and_hms_opt(0, 0, 0)
                .expect("midnight exists"),
        )
        .earliest()
        .ok_or_else(|| Error::InvalidConfig("scenario start date has no local midnight".into()))?;
    let step = Duration::minutes(config.step_min as i64);
    let step_s = step.num_seconds();
    let step_h = step_s as f64 / 3600.0;
    let per_day = (1440 / config.step_min) as usize;
    let n = config.days as usize * per_day;

    // Background: base + diurnal envelope * random activity + folded
    // noise. Squaring the uniform activity draw keeps most intervals
    // near the base with occasional bursts toward the envelope.
    let mut background = vec![0.0f64; n];
    {
        let mut rng = stream(config.seed, STREAM_BACKGROUND);
        let noise = if config.background.noise_kw > 0.0 {
            Some(Normal::new(0.0, config.background.noise_kw).expect("finite sd"))
        } else {
            None
        };
        for (i, slot) in background.iter_mut().enumerate() {
            let local = (start + step * i as i32).time();
            let seconds = local.num_seconds_from_midnight();
            let activity: f64 = rng.gen::<f64>().powi(2);
            let mut v = config.background.base_kw
                + config.background.diurnal_amplitude_kw * diurnal_shape(seconds) * activity;
            if let Some(dist) = &noise {
                v += dist.sample(&mut rng).abs();
            }
            *slot = v;
        }
    }

    // Device plateaus at off-peak starts.
    let mut truth = vec![0.0f64; n];
    if let Some(cwh) = &config.cwh {
        let mut rng = stream(config.seed, STREAM_CWH);
        for day in 0..config.days as i64 {
            let Some(date) = config.start_date.checked_add_signed(Duration::days(day)) else {
                continue;
            };
            for iv in schedule.intervals() {
                let Some(occ) = tz
                    .from_local_datetime(
                        &date
                            .and_hms_opt(0, 0, 0)
                            .expect("midnight")
                            .checked_add_signed(Duration::minutes(iv.start_min as i64))
                            .expect("in range"),
                    )
                    .earliest()
                else {
                    continue; // spring-forward: this start does not exist today
                };
                let delta = (occ - start).num_seconds();
                if delta < 0 || delta % step_s != 0 {
                    continue;
                }
                let k = (delta / step_s) as usize;
                if k >= n {
                    continue;
                }
                // Each start triggers unless skipped; draws happen
                // unconditionally so the event layout only depends on day
                // order, not on earlier outcomes.
                let skip = rng.gen_bool(cwh.skip_probability);
                let jitter = if cwh.duration_jitter_intervals > 0 {
                    rng.gen_range(
                        -(cwh.duration_jitter_intervals as i64)
                            ..=cwh.duration_jitter_intervals as i64,
                    )
                } else {
                    0
                };
                let reactivate = rng.gen_bool(cwh.morning_reactivation_probability);

                let window = (iv.duration_min / config.step_min) as usize;
                if skip {
                    continue;
                }
                let duration = ((cwh.mean_duration_intervals as i64 + jitter).max(1) as usize)
                    .min(window.max(1));
                for slot in truth.iter_mut().skip(k).take(duration.min(n - k)) {
                    *slot += cwh.power_kw;
                }
                if reactivate {
                    let m = k + window.max(1) - 1;
                    // Needs a gap after the main plateau to stand alone.
                    if m < n && m > k + duration {
                        truth[m] += cwh.power_kw;
                    }
                }
            }
        }
    }

    // Confounding appliances.
    let mut confounder = vec![0.0f64; n];
    {
        let mut rng = stream(config.seed, STREAM_CONFOUNDERS);
        for cfg in &config.confounders {
            let lambda = cfg.rate_per_day * config.days as f64;
            let events = if lambda > 0.0 {
                Poisson::new(lambda)
                    .expect("positive rate")
                    .sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..events {
                let (k, max_len) = match cfg.alignment {
                    ConfounderAlignment::Random => (rng.gen_range(0..n), 4),
                    ConfounderAlignment::OffPeakStart => {
                        let day = rng.gen_range(0..config.days as i64);
                        let iv = schedule.intervals()[rng.gen_range(0..schedule.intervals().len())];
                        let Some(date) = config.start_date.checked_add_signed(Duration::days(day))
                        else {
                            continue;
                        };
                        let Some(occ) = tz
                            .from_local_datetime(
                                &date
                                    .and_hms_opt(0, 0, 0)
                                    .expect("midnight")
                                    .checked_add_signed(Duration::minutes(iv.start_min as i64))
                                    .expect("in range"),
                            )
                            .earliest()
                        else {
                            continue;
                        };
                        let delta = (occ - start).num_seconds();
                        if delta < 0 || delta % step_s != 0 {
                            continue;
                        }
                        let k = (delta / step_s) as usize;
                        if k >= n {
                            continue;
                        }
                        (
                            k,
                            ((iv.duration_min / config.step_min) as usize).clamp(1, 4),
                        )
                    }
                };
                let len = rng.gen_range(1..=max_len.max(1));
                for slot in confounder.iter_mut().skip(k).take(len.min(n - k)) {
                    *slot += cfg.power_kw;
                }
            }
        }
    }

    let values: Vec<Option<f64>> = (0..n)
        .map(|i| Some(background[i] + truth[i] + confounder[i]))
        .collect();
    let curve = LoadCurve::new(config.household_id.clone(), start, step, values)?;
    let ground_truth = GroundTruth::new(start, step, truth.clone())?;

    let background_kwh = background.iter().sum::<f64>() * step_h;
    let cwh_kwh = truth.iter().sum::<f64>() * step_h;
    let confounder_kwh = confounder.iter().sum::<f64>() * step_h;
    let total_kwh = curve.total_energy_kwh();
    let injected_activations = truth
        .iter()
        .zip(std::iter::once(&0.0).chain(truth.iter()))
        .filter(|(cur, prev)| **cur > 0.0 && **prev == 0.0)
        .count();

    let meta = ScenarioTruth {
        household_id: config.household_id.clone(),
        seed: config.seed,
        background_kwh,
        cwh_kwh,
        confounder_kwh,
        total_kwh,
        cwh_share: if total_kwh > 0.0 {
            cwh_kwh / total_kwh
        } else {
            0.0
        },
        injected_activations,
        cwh_power_kw: config.cwh.map(|c| c.power_kw),
    };
    Ok((curve, ground_truth, meta))
}

/// Mean of the exponential noise added by [`anonymize`], kW.
pub const ANONYMIZE_NOISE_MEAN_KW: f64 = 0.005;

/// Add an independent exponential draw (mean 0.005 kW) to each present
/// value; missing values stay missing. Deterministic per seed.
pub fn anonymize(curve: &LoadCurve, seed: u64) -> LoadCurve {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Exp::new(1.0 / ANONYMIZE_NOISE_MEAN_KW).expect("positive rate");
    let values: Vec<Option<f64>> = curve
        .values()
        .iter()
        .map(|v| v.map(|p| p + dist.sample(&mut rng)))
        .collect();
    LoadCurve::new(curve.household_id(), curve.start(), curve.step(), values)
        .expect("noise keeps values finite and nonnegative")
}
