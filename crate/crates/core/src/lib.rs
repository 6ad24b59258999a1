//! Detection and disaggregation of off-peak-triggered cumulative water
//! heaters (CWH) from low-frequency household load curves.
//!
//! The method is unsupervised and works in two steps. Per 7-day
//! observation, a KDE over the power values separates background from
//! spike consumption; runs above that threshold become spikes tagged
//! with their offset to the nearest off-peak start. Spikes starting
//! exactly at an off-peak start are then clustered by peak power with a
//! second KDE; a cluster inside the expected device band (0.8 to 5 kW by
//! default) means the household has a detectable CWH, and all matching
//! spikes are attributed to it.
//!
//! The crate also ships the validation harness (interval confusion at
//! the 100 W test, activation-level precision/recall) and a seeded
//! synthetic household generator used as ground-truth oracle.

pub mod classifier;
pub mod config;
pub mod data;
pub mod detector;
pub mod disagg;
pub mod error;
pub mod evaluate;
pub mod kde;
pub mod synth;

pub use classifier::{
    classify, detect_cwh, filter_aligned, find_power_cluster, DetectionResult, PowerCluster,
};
pub use config::DetectConfig;
pub use data::{
    offset_to_nearest_start, parse_load_curve, segment, HouseholdMeta, LoadCurve, Observation,
    OffPeakInterval, OffPeakSchedule, WaterHeatingType,
};
pub use detector::{compute_threshold, extract_spikes, ObservationThreshold, Spike};
pub use disagg::{
    attribute, consumption_fractions, to_activations, Activation, AttributionSeries,
    ConsumptionFractions,
};
pub use error::{Error, Result};
pub use evaluate::{
    activation_metrics, evaluate, interval_confusion, truth_activations, ActivationMetrics,
    ConfusionMatrix, EvaluationReport, GroundTruth,
};
pub use kde::{
    evaluate_density, first_local_minimum, lowest_local_minimum, scott_bandwidth, DensityEstimate,
    ValleyStrategy,
};
pub use synth::{anonymize, generate, ScenarioConfig, ScenarioTruth};
