//! `cwh` — detect and disaggregate off-peak-triggered water heaters from
//! 30-minute household load curves.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/IO error.

mod batch;
mod common;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use cwh_core::{
    attribute, consumption_fractions, detect_cwh, evaluate, parse_load_curve, to_activations,
    Activation, AttributionSeries, DetectConfig, DetectionResult, GroundTruth, HouseholdMeta,
    ScenarioConfig, WaterHeatingType,
};
use serde::Serialize;

use crate::common::{
    curve_files, household_id_from, load_metadata, schedule_for, write_output, DetectionFlags,
    TimeBaseFlags,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<cwh_core::Error> for CliError {
    fn from(e: cwh_core::Error) -> Self {
        CliError::Data(e.into())
    }
}

#[derive(Parser)]
#[command(
    name = "cwh",
    version,
    about = "Detect and disaggregate off-peak-triggered water heaters from low-frequency load curves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run detection on one household and write the result as JSON.
    Detect(DetectArgs),
    /// Run detection over a dataset directory and aggregate a summary.
    Batch(BatchArgs),
    /// Detect, then write activations, attribution and daily fractions.
    Disaggregate(DisaggArgs),
    /// Compare a prediction against ground truth at the 100 W test.
    Evaluate(EvaluateArgs),
    /// Generate synthetic households with embedded ground truth.
    Simulate(SimulateArgs),
    /// Add exponential noise (mean 5 W) to a load curve.
    Anonymize(AnonymizeArgs),
    /// Emit figure-ready CSV tables from a batch summary.
    Report(ReportArgs),
}

#[derive(clap::Args)]
struct DetectArgs {
    /// Load curve CSV (`timestamp,power_kw`).
    #[arg(long)]
    input: PathBuf,
    /// Metadata JSON: a household object or a map of id to object.
    #[arg(long)]
    schedule: PathBuf,
    /// Household id (default: input file stem).
    #[arg(long)]
    household_id: Option<String>,
    /// Output path, `-` for stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    /// Also dump every extracted spike as CSV.
    #[arg(long)]
    spike_dump: Option<PathBuf>,
    /// Off-peak ranges must be multiples of this many minutes.
    #[arg(long, default_value_t = 30)]
    schedule_resolution_min: u32,
    /// Require the off-peak total to be exactly eight hours.
    #[arg(long)]
    strict_schedule: bool,
    #[command(flatten)]
    time: TimeBaseFlags,
    #[command(flatten)]
    detection: DetectionFlags,
}

#[derive(clap::Args)]
struct BatchArgs {
    /// Directory of per-household CSVs (`<id>.csv`).
    #[arg(long)]
    dir: PathBuf,
    /// Metadata JSON mapping household id to off-peak ranges and fields.
    #[arg(long)]
    metadata: PathBuf,
    /// Output directory for `summary.json` and `households.csv`.
    #[arg(long)]
    out_dir: PathBuf,
    /// Eligibility gate: minimum present samples per household.
    #[arg(long, default_value_t = 1440)]
    min_samples: usize,
    /// Worker threads (0 = all cores). Output order is id-sorted either way.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 30)]
    schedule_resolution_min: u32,
    #[arg(long)]
    strict_schedule: bool,
    #[command(flatten)]
    time: TimeBaseFlags,
    #[command(flatten)]
    detection: DetectionFlags,
}

#[derive(clap::Args)]
struct DisaggArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long)]
    household_id: Option<String>,
    /// Prefix for `<prefix>.result.json`, `.activations.csv`,
    /// `.attribution.csv` and `.daily.csv`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long, default_value_t = 30)]
    schedule_resolution_min: u32,
    #[arg(long)]
    strict_schedule: bool,
    #[command(flatten)]
    time: TimeBaseFlags,
    #[command(flatten)]
    detection: DetectionFlags,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Ground-truth CSV (`timestamp,cwh_power_kw`, any resolution at or
    /// below the meter step).
    #[arg(long)]
    truth: PathBuf,
    /// Predicted attribution CSV; mutually exclusive with --input.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Load curve to run the pipeline on instead of --pred.
    #[arg(long, requires = "schedule")]
    input: Option<PathBuf>,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long)]
    household_id: Option<String>,
    /// Activation test threshold in kW.
    #[arg(long, default_value_t = 0.1)]
    threshold_kw: f64,
    #[arg(long, default_value = "-")]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    schedule_resolution_min: u32,
    #[command(flatten)]
    time: TimeBaseFlags,
    #[command(flatten)]
    detection: DetectionFlags,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Scenario JSON: one scenario object or an array of them.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory: `<id>.csv`, `<id>.truth.csv`,
    /// `<id>.scenario_truth.json` per scenario plus `metadata.json`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct AnonymizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "-")]
    out: PathBuf,
    #[arg(long)]
    household_id: Option<String>,
    #[command(flatten)]
    time: TimeBaseFlags,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// `summary.json` produced by `cwh batch`.
    #[arg(long)]
    summary: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Detection result wrapped with the configuration that produced it.
#[derive(Serialize)]
struct DetectOutput<'a> {
    config: &'a DetectConfig,
    result: &'a DetectionResult,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Detect(args) => run_detect(args),
        Command::Batch(args) => run_batch_cmd(args),
        Command::Disaggregate(args) => run_disaggregate(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Anonymize(args) => run_anonymize(args),
        Command::Report(args) => run_report(args),
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::from)
}

fn to_json(value: &impl Serialize) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)
        .context("serializing output")
        .map_err(CliError::from)?;
    s.push('\n');
    Ok(s)
}

fn run_detect(args: DetectArgs) -> Result<(), CliError> {
    let config = args.detection.to_config()?;
    let tz = args.time.timezone()?;
    let step = args.time.step()?;
    let id = args
        .household_id
        .clone()
        .unwrap_or_else(|| household_id_from(&args.input));

    let metadata = load_metadata(&args.schedule)?;
    let (_, schedule) = schedule_for(
        &metadata,
        &id,
        args.schedule_resolution_min,
        args.strict_schedule,
    )?;
    let curve = parse_load_curve(&read_input(&args.input)?, tz, step, &id)?;
    let result = detect_cwh(&curve, &schedule, &config)?;

    if let Some(dump) = &args.spike_dump {
        let mut spikes = result.cwh_spikes.clone();
        spikes.extend(result.other_spikes.iter().cloned());
        spikes.sort_by_key(|s| s.start_index);
        write_output(dump, &cwh_core::detector::spikes_to_csv(&spikes))?;
    }
    write_output(
        &args.out,
        &to_json(&DetectOutput {
            config: &config,
            result: &result,
        })?,
    )?;
    Ok(())
}

fn run_batch_cmd(args: BatchArgs) -> Result<(), CliError> {
    let config = args.detection.to_config()?;
    let tz = args.time.timezone()?;
    let step = args.time.step()?;
    let files = curve_files(&args.dir)?;
    let metadata = load_metadata(&args.metadata)?;

    let summary = batch::run_batch(
        &files,
        &metadata,
        tz,
        step,
        args.min_samples,
        args.schedule_resolution_min,
        args.strict_schedule,
        &config,
        args.workers,
    )?;

    write_output(&args.out_dir.join("summary.json"), &to_json(&summary)?)?;
    write_output(
        &args.out_dir.join("households.csv"),
        &batch::households_csv(&summary),
    )?;
    eprintln!(
        "batch: {} households, {} processed, {} skipped",
        summary.total_households,
        summary.processed,
        summary.total_households - summary.processed
    );
    Ok(())
}

fn activations_csv(activations: &[Activation]) -> String {
    let mut out = String::from("start,duration_min,mean_power_kw,peak_power_kw,energy_kwh\n");
    for a in activations {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            a.start.to_rfc3339_opts(chrono::SecondsFormat::Secs, false),
            a.duration_min,
            a.mean_power_kw,
            a.peak_power_kw,
            a.energy_kwh
        ));
    }
    out
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

fn run_disaggregate(args: DisaggArgs) -> Result<(), CliError> {
    let config = args.detection.to_config()?;
    let tz = args.time.timezone()?;
    let step = args.time.step()?;
    let id = args
        .household_id
        .clone()
        .unwrap_or_else(|| household_id_from(&args.input));

    let metadata = load_metadata(&args.schedule)?;
    let (_, schedule) = schedule_for(
        &metadata,
        &id,
        args.schedule_resolution_min,
        args.strict_schedule,
    )?;
    let curve = parse_load_curve(&read_input(&args.input)?, tz, step, &id)?;
    let result = detect_cwh(&curve, &schedule, &config)?;
    let activations = to_activations(&result, curve.step());
    let attr = attribute(&curve, &result);
    let fractions = consumption_fractions(&curve, &attr)?;

    write_output(
        &with_suffix(&args.out_prefix, ".result.json"),
        &to_json(&DetectOutput {
            config: &config,
            result: &result,
        })?,
    )?;
    write_output(
        &with_suffix(&args.out_prefix, ".activations.csv"),
        &activations_csv(&activations),
    )?;
    write_output(
        &with_suffix(&args.out_prefix, ".attribution.csv"),
        &attr.to_csv(),
    )?;
    write_output(
        &with_suffix(&args.out_prefix, ".daily.csv"),
        &cwh_core::disagg::fractions_to_csv(&fractions),
    )?;
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let tz = args.time.timezone()?;
    let step = args.time.step()?;
    if args.pred.is_some() == args.input.is_some() {
        return Err(CliError::Usage(
            "provide exactly one of --pred or --input (with --schedule)".into(),
        ));
    }

    let pred: AttributionSeries = if let Some(pred_path) = &args.pred {
        AttributionSeries::from_csv(&read_input(pred_path)?, tz, step)?
    } else {
        let input = args.input.as_ref().expect("checked above");
        let schedule_path = args.schedule.as_ref().expect("clap requires");
        let config = args.detection.to_config()?;
        let id = args
            .household_id
            .clone()
            .unwrap_or_else(|| household_id_from(input));
        let metadata = load_metadata(schedule_path)?;
        let (_, schedule) = schedule_for(&metadata, &id, args.schedule_resolution_min, false)?;
        let curve = parse_load_curve(&read_input(input)?, tz, step, &id)?;
        let result = detect_cwh(&curve, &schedule, &config)?;
        attribute(&curve, &result)
    };

    let truth = GroundTruth::from_sensor_csv(
        &read_input(&args.truth)?,
        pred.start(),
        pred.step(),
        pred.len(),
    )?;
    let report = evaluate(&pred, &truth, args.threshold_kw)?;
    write_output(&args.out, &to_json(&report)?)?;
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let text = read_input(&args.scenario)?;
    let scenarios: Vec<ScenarioConfig> = match serde_json::from_str::<Vec<ScenarioConfig>>(&text) {
        Ok(list) => list,
        Err(_) => vec![serde_json::from_str(&text)
            .with_context(|| format!("parsing scenario file {}", args.scenario.display()))
            .map_err(CliError::from)?],
    };

    let mut metadata: std::collections::BTreeMap<String, HouseholdMeta> = Default::default();
    for scenario in &scenarios {
        let (curve, truth, scenario_truth) = cwh_core::generate(scenario)?;
        let id = scenario.household_id.clone();
        write_output(&args.out_dir.join(format!("{id}.csv")), &curve.to_csv())?;
        write_output(
            &args.out_dir.join(format!("{id}.truth.csv")),
            &truth.to_csv(),
        )?;
        write_output(
            &args.out_dir.join(format!("{id}.scenario_truth.json")),
            &to_json(&scenario_truth)?,
        )?;
        metadata.insert(
            id,
            HouseholdMeta {
                off_peak: scenario.off_peak.clone(),
                water_heating_type: Some(if scenario.cwh.is_some() {
                    WaterHeatingType::Elec
                } else {
                    WaterHeatingType::Gas
                }),
                surface_m2: None,
                inhabitants: None,
            },
        );
    }
    write_output(&args.out_dir.join("metadata.json"), &to_json(&metadata)?)?;
    eprintln!(
        "simulated {} household(s) into {}",
        scenarios.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_anonymize(args: AnonymizeArgs) -> Result<(), CliError> {
    let tz = args.time.timezone()?;
    let step = args.time.step()?;
    let id = args
        .household_id
        .clone()
        .unwrap_or_else(|| household_id_from(&args.input));
    let curve = parse_load_curve(&read_input(&args.input)?, tz, step, &id)?;
    let noisy = cwh_core::anonymize(&curve, args.seed);
    write_output(&args.out, &noisy.to_csv())?;
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<(), CliError> {
    let text = read_input(&args.summary)?;
    let summary: batch::BatchSummary = serde_json::from_str(&text)
        .with_context(|| format!("parsing batch summary {}", args.summary.display()))
        .map_err(CliError::from)?;

    write_output(
        &args.out_dir.join("detection_fractions.csv"),
        &report::detection_fractions_csv(&summary),
    )?;
    write_output(
        &args.out_dir.join("power_histogram.csv"),
        &report::power_histogram_csv(&summary),
    )?;
    write_output(
        &args.out_dir.join("daily_fraction_histogram.csv"),
        &report::fraction_histogram_csv(&summary.daily_fraction_histogram),
    )?;
    write_output(
        &args.out_dir.join("overall_fraction_histogram.csv"),
        &report::fraction_histogram_csv(&summary.overall_fraction_histogram),
    )?;
    Ok(())
}
