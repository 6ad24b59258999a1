//! Detection pipeline configuration and defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::ValleyStrategy;

/// Knobs for the whole detection pipeline. The defaults reproduce the
/// standard configuration: 7-day observations, a 512-point KDE grid, an
/// expected device band of 0.8 to 5 kW and exact off-peak alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Observation window length in days.
    pub window_days: u32,
    /// KDE evaluation grid size.
    pub grid_points: usize,
    /// Expected device power band in kW.
    pub expected_low_kw: f64,
    pub expected_high_kw: f64,
    /// Minimum number of in-band aligned spikes for a successful fit.
    /// `None` applies the rule `max(3, days / 6)`.
    pub min_support: Option<usize>,
    /// Spikes count as aligned when `|offset| <= tolerance` minutes.
    pub alignment_tolerance_min: i64,
    /// Valley picked by the spike-power clustering step.
    pub valley_strategy: ValleyStrategy,
    /// A valley only bounds the power cluster when it sits at least this
    /// far below the in-band density peak. Sampling wiggles inside one
    /// device cluster sit closer to the peak than its physical width and
    /// must not truncate it.
    pub valley_min_separation_kw: f64,
    /// Observations with fewer present samples are skipped.
    pub min_present_per_observation: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            window_days: 7,
            grid_points: 512,
            expected_low_kw: 0.8,
            expected_high_kw: 5.0,
            min_support: None,
            alignment_tolerance_min: 0,
            valley_strategy: ValleyStrategy::default(),
            valley_min_separation_kw: 0.5,
            min_present_per_observation: 48,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_days == 0 {
            return Err(Error::InvalidConfig(
                "window must be at least one day".into(),
            ));
        }
        if self.grid_points < 64 {
            return Err(Error::InvalidConfig(
                "grid must have at least 64 points".into(),
            ));
        }
        if !(self.expected_low_kw > 0.0 && self.expected_low_kw < self.expected_high_kw) {
            return Err(Error::InvalidConfig(format!(
                "expected range {}:{} kW is not an increasing positive pair",
                self.expected_low_kw, self.expected_high_kw
            )));
        }
        if self.alignment_tolerance_min < 0 {
            return Err(Error::InvalidConfig(
                "alignment tolerance must be >= 0".into(),
            ));
        }
        if !(self.valley_min_separation_kw >= 0.0 && self.valley_min_separation_kw.is_finite()) {
            return Err(Error::InvalidConfig(
                "valley separation must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Support floor: configured value, or one detection per six days of
    /// data with a floor of three.
    pub fn min_support_for(&self, curve_days: i64) -> usize {
        self.min_support
            .unwrap_or_else(|| ((curve_days / 6).max(3)) as usize)
    }
}
