//! Shared CLI plumbing: flag-to-config assembly, timezone resolution,
//! schedule/metadata loading and small IO helpers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use chrono::Duration;
use chrono_tz::Tz;
use clap::Args;
use cwh_core::{DetectConfig, HouseholdMeta, OffPeakSchedule, ValleyStrategy};

use crate::CliError;

/// Environment variable overriding the default timezone.
pub const TZ_ENV: &str = "CWH_TZ";

/// Flags shared by every command that runs the detection pipeline.
/// Precedence: flags > per-household metadata > built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct DetectionFlags {
    /// Expected device power band, `LO:HI` in kW.
    #[arg(long, value_name = "LO:HI")]
    pub expected_range: Option<String>,

    /// Observation window in days.
    #[arg(long, value_name = "DAYS")]
    pub window_days: Option<u32>,

    /// KDE evaluation grid size.
    #[arg(long, value_name = "POINTS")]
    pub grid: Option<usize>,

    /// Minimum number of in-band aligned spikes for a successful fit
    /// (default rule: max(3, days/6)).
    #[arg(long, value_name = "N")]
    pub min_support: Option<usize>,

    /// Spikes count as off-peak aligned when |offset| <= this many minutes.
    #[arg(long, value_name = "MIN")]
    pub alignment_tolerance_min: Option<i64>,

    /// Valley used by the power clustering step.
    #[arg(long, value_enum)]
    pub valley_strategy: Option<ValleyStrategyArg>,

    /// Minimum distance (kW) between a valley and the density peak for
    /// the valley to bound the power cluster.
    #[arg(long, value_name = "KW")]
    pub valley_min_separation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ValleyStrategyArg {
    LowestDensity,
    FirstFromLeft,
}

impl DetectionFlags {
    pub fn to_config(&self) -> Result<DetectConfig, CliError> {
        let mut config = DetectConfig::default();
        if let Some(range) = &self.expected_range {
            let (lo, hi) = range.split_once(':').ok_or_else(|| {
                CliError::Usage(format!("--expected-range wants `LO:HI`, got `{range}`"))
            })?;
            config.expected_low_kw = lo.trim().parse().map_err(|_| {
                CliError::Usage(format!("bad low bound `{lo}` in --expected-range"))
            })?;
            config.expected_high_kw = hi.trim().parse().map_err(|_| {
                CliError::Usage(format!("bad high bound `{hi}` in --expected-range"))
            })?;
        }
        if let Some(v) = self.window_days {
            config.window_days = v;
        }
        if let Some(v) = self.grid {
            config.grid_points = v;
        }
        if self.min_support.is_some() {
            config.min_support = self.min_support;
        }
        if let Some(v) = self.alignment_tolerance_min {
            config.alignment_tolerance_min = v;
        }
        if let Some(v) = self.valley_strategy {
            config.valley_strategy = match v {
                ValleyStrategyArg::LowestDensity => ValleyStrategy::LowestDensity,
                ValleyStrategyArg::FirstFromLeft => ValleyStrategy::FirstFromLeft,
            };
        }
        if let Some(v) = self.valley_min_separation {
            config.valley_min_separation_kw = v;
        }
        config
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

/// Flags describing the input time base.
#[derive(Debug, Clone, Args)]
pub struct TimeBaseFlags {
    /// Timezone for naive timestamps (default: $CWH_TZ or Europe/Paris).
    #[arg(long, value_name = "ZONE")]
    pub tz: Option<String>,

    /// Sampling step in minutes.
    #[arg(long, default_value_t = 30, value_name = "MIN")]
    pub step_min: i64,
}

impl TimeBaseFlags {
    pub fn timezone(&self) -> Result<Tz, CliError> {
        let name = match &self.tz {
            Some(t) => t.clone(),
            None => std::env::var(TZ_ENV).unwrap_or_else(|_| "Europe/Paris".into()),
        };
        Tz::from_str(&name).map_err(|_| CliError::Usage(format!("unknown timezone `{name}`")))
    }

    pub fn step(&self) -> Result<Duration, CliError> {
        if self.step_min <= 0 {
            return Err(CliError::Usage("--step-min must be positive".into()));
        }
        Ok(Duration::minutes(self.step_min))
    }
}

/// Household id from a curve file path (file stem).
pub fn household_id_from(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "household".into())
}

/// A metadata file is either a single household object or a map of
/// household id to metadata.
pub fn load_metadata(path: &Path) -> anyhow::Result<BTreeMap<String, HouseholdMeta>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading metadata file {}", path.display()))?;
    if let Ok(map) = serde_json::from_str::<BTreeMap<String, HouseholdMeta>>(&text) {
        return Ok(map);
    }
    let single: HouseholdMeta = serde_json::from_str(&text)
        .with_context(|| format!("parsing metadata file {}", path.display()))?;
    let mut map = BTreeMap::new();
    map.insert(String::new(), single);
    Ok(map)
}

/// Pick the schedule (and metadata) for one household from a metadata
/// file: a single-household file matches anything, a map must contain
/// the id.
pub fn schedule_for(
    metadata: &BTreeMap<String, HouseholdMeta>,
    household_id: &str,
    resolution_min: u32,
    strict: bool,
) -> anyhow::Result<(HouseholdMeta, OffPeakSchedule)> {
    let meta = if metadata.len() == 1 && metadata.contains_key("") {
        metadata.get("").expect("checked")
    } else {
        metadata
            .get(household_id)
            .ok_or_else(|| anyhow!("no metadata entry for household `{household_id}`"))?
    };
    let schedule = meta.schedule(resolution_min, strict)?;
    Ok((meta.clone(), schedule))
}

/// Write to a file, or stdout when the path is `-`.
pub fn write_output(path: &Path, contents: &str) -> anyhow::Result<()> {
    if path == Path::new("-") {
        print!("{contents}");
        Ok(())
    } else {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
    }
}

/// Curve CSV files in a dataset directory, sorted by household id.
pub fn curve_files(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().map(|e| e == "csv").unwrap_or(false) {
            // Companion files written by `simulate` are not load curves.
            let stem = household_id_from(&path);
            if stem.ends_with(".truth") {
                continue;
            }
            files.push((stem, path));
        }
    }
    files.sort();
    Ok(files)
}
