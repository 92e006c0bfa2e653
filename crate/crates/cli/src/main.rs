mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use soilscope::estimation::{rolling_median, Method};
use soilscope::ingestion::{load_cleanings, parse_telemetry, ParseOptions};
use soilscope::metrics::{mae, rmse};
use soilscope::output::{
    daily_median, events_text, read_value_series, reports_jsonl, series_csv, sr_csv, telemetry_csv, trends_csv,
};
use soilscope::pipeline::{run_detection, run_pipeline, PipelineConfig};
use soilscope::synthgen::{generate, ScenarioConfig};
use soilscope::{EventStatus, Span, Timestamp};

use crate::config::{RunConfig, Usage};
use crate::manifest::Manifest;

const EXIT_EMPTY: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;

#[derive(Parser)]
#[command(name = "soilscope", version, about = "Soiling-ratio estimation for PV telemetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scenario file.
    Synth(SynthArgs),
    /// Score candidate cleaning events and write per-event reports.
    Detect(RunArgs),
    /// Estimate the soiling ratio and per-segment trends.
    Estimate(RunArgs),
    /// Compare an SR series against a reference (e.g. a soiling derate).
    Evaluate(EvaluateArgs),
    /// Write plot-ready CSV files from estimate outputs.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario file (key = value).
    scenario: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct RunArgs {
    /// Telemetry CSV.
    pub data: PathBuf,
    /// fcse (default), bcse or baseline.
    #[arg(long)]
    pub method: Option<String>,
    /// Cleaning log: one date or `start,end` pair per line.
    #[arg(long)]
    pub cleanings: Option<PathBuf>,
    /// Configuration file (key = value); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub w1: Option<u32>,
    #[arg(long)]
    pub w2: Option<u32>,
    #[arg(long)]
    pub w3: Option<u32>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub w_train: Option<u32>,
    #[arg(long)]
    pub mape_gate: Option<f64>,
    #[arg(long)]
    pub poly_degree: Option<usize>,
    #[arg(long)]
    pub ridge_alpha: Option<f64>,
    #[arg(long)]
    pub min_rain_peak: Option<f64>,
    #[arg(long)]
    pub min_irradiance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// instant or accumulated.
    #[arg(long)]
    pub precip_mode: Option<String>,
    /// Rolling-median window for sr_smoothed, in days.
    #[arg(long)]
    pub smooth_days: Option<f64>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub show_config: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// SR CSV written by `estimate`, or any `timestamp,value` CSV.
    sr: PathBuf,
    /// Reference series CSV.
    reference: PathBuf,
    /// Column of the SR file to compare.
    #[arg(long, default_value = "sr_clipped")]
    column: String,
    /// Column of the reference file; defaults to the second column.
    #[arg(long)]
    reference_column: Option<String>,
    /// Also write the metrics as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// SR CSV written by `estimate`.
    #[arg(long)]
    sr: PathBuf,
    #[arg(long)]
    trends: Option<PathBuf>,
    /// Event reports (JSON lines) written by `detect` or `estimate`.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Cleaning log, drawn as manual-cleaning markers.
    #[arg(long)]
    cleanings: Option<PathBuf>,
    /// Reference derate to overlay.
    #[arg(long)]
    derate: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    smooth_days: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<soilscope::Error>() {
        Some(soilscope::Error::NoValidCandidates) => EXIT_EMPTY,
        Some(soilscope::Error::InvalidConfig(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn write(path: &Path, contents: &str) -> anyhow::Result<PathBuf> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.scenario)
        .map_err(|e| soilscope::Error::io(&a.scenario, e))?;
    let mut scenario = ScenarioConfig::from_kv(&text)?;
    if let Some(seed) = config::env_seed()? {
        scenario.seed = seed;
    }
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let ds = generate(&scenario)?;
    create_dir(&a.out)?;
    let true_events: Vec<_> = ds.events.iter().map(|e| e.interval).collect();
    let outputs = vec![
        write(&a.out.join("telemetry.csv"), &telemetry_csv(&ds.series))?,
        write(&a.out.join("truth.csv"), &series_csv(&ds.truth))?,
        write(&a.out.join("events.txt"), &events_text(&true_events))?,
        write(&a.out.join("cleanings.txt"), &events_text(&ds.manual_cleanings))?,
    ];
    let mut m = Manifest::new("synth", scenario.seed);
    m.config = scenario.to_kv().lines().map(str::to_string).collect();
    m.add_input(&a.scenario)?;
    m.outputs = outputs;
    m.write(&a.out)?;
    println!(
        "{} records, {} cleaning events, {} manual cleanings",
        ds.series.len(),
        ds.events.len(),
        ds.manual_cleanings.len()
    );
    Ok(())
}

struct Loaded {
    run: RunConfig,
    series: soilscope::TelemetrySeries,
    cleanings: Vec<soilscope::EventInterval>,
    manifest: Manifest,
}

fn load(a: &RunArgs, command: &str, allowed: &[Method]) -> anyhow::Result<Option<Loaded>> {
    let run = RunConfig::resolve(a)?;
    if !allowed.contains(&run.method) {
        return Err(Usage(format!("`{command}` does not support method {}", run.method)).into());
    }
    if a.show_config {
        print!("{}", run.to_kv());
        return Ok(None);
    }
    if run.method != Method::Fcse && a.cleanings.is_none() {
        return Err(Usage(format!("method {} requires --cleanings", run.method)).into());
    }
    let opts = ParseOptions {
        precip_mode: run.precip_mode,
        min_irradiance: run.detector.min_irradiance,
        ..ParseOptions::default()
    };
    let parsed = parse_telemetry(&a.data, &opts)?;
    let cleanings = match &a.cleanings {
        Some(p) => load_cleanings(p)?,
        None => Vec::new(),
    };
    let mut manifest = Manifest::new(command, run.detector.seed);
    manifest.config = run.to_kv().lines().map(str::to_string).collect();
    manifest.add_input(&a.data)?;
    if let Some(p) = &a.cleanings {
        manifest.add_input(p)?;
    }
    if let Some(p) = &a.config {
        manifest.add_input(p)?;
    }
    eprintln!(
        "{} records ({} invalid rows dropped, {} below irradiance floor)",
        parsed.series.len(),
        parsed.dropped_invalid,
        parsed.dropped_low_irradiance
    );
    Ok(Some(Loaded {
        run,
        series: parsed.series,
        cleanings,
        manifest,
    }))
}

fn summary(det: &soilscope::Detection) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "candidates: {}", det.reports.len());
    for (label, status) in [
        ("detected", EventStatus::Detected),
        ("rejected", EventStatus::Rejected),
        ("invalid", EventStatus::Invalid),
    ] {
        let _ = writeln!(s, "{label}: {}", det.count(status));
    }
    let _ = writeln!(s, "threshold: {}", det.threshold);
    s
}

fn cmd_detect(a: &RunArgs) -> anyhow::Result<()> {
    let Some(mut l) = load(a, "detect", &[Method::Fcse, Method::Bcse])? else {
        return Ok(());
    };
    let (_, det) = run_detection(&l.series, &l.cleanings, l.run.method, &l.run.detector)?;
    create_dir(&a.out)?;
    let text = summary(&det);
    l.manifest.outputs = vec![
        write(&a.out.join("events.jsonl"), &reports_jsonl(&det.reports))?,
        write(&a.out.join("summary.txt"), &text)?,
    ];
    l.manifest.write(&a.out)?;
    print!("{text}");
    Ok(())
}

fn cmd_estimate(a: &RunArgs) -> anyhow::Result<()> {
    let Some(mut l) = load(a, "estimate", &[Method::Baseline, Method::Fcse, Method::Bcse])? else {
        return Ok(());
    };
    let cfg = PipelineConfig {
        method: l.run.method,
        detector: l.run.detector.clone(),
        smooth_window: l.run.smooth_window(),
    };
    let out = run_pipeline(&l.series, &l.cleanings, &cfg)?;
    create_dir(&a.out)?;
    let mut outputs = vec![
        write(&a.out.join("sr.csv"), &sr_csv(&out.sr))?,
        write(&a.out.join("trends.csv"), &trends_csv(&out.trends))?,
        write(&a.out.join("training_events.txt"), &events_text(&out.training_events))?,
    ];
    if let Some(det) = &out.detection {
        outputs.push(write(&a.out.join("events.jsonl"), &reports_jsonl(&det.reports))?);
        outputs.push(write(&a.out.join("summary.txt"), &summary(det))?);
    }
    l.manifest.outputs = outputs;
    l.manifest.write(&a.out)?;
    let negative = out.trends.iter().filter(|t| t.negative).count();
    println!(
        "{} SR points, {} training events, {} trend segments ({} negative)",
        out.sr.len(),
        out.training_events.len(),
        out.trends.len(),
        negative
    );
    Ok(())
}

fn month_key(t: Timestamp) -> String {
    t.to_datetime().format("%Y-%m").to_string()
}

fn cmd_evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let sr = daily_median(&read_value_series(&a.sr, Some(&a.column))?);
    let reference = daily_median(&read_value_series(&a.reference, a.reference_column.as_deref())?);
    let overall = (rmse(&sr, &reference)?, mae(&sr, &reference)?);
    let ref_days: BTreeMap<Timestamp, f64> = reference.iter().copied().collect();
    let shared = sr.iter().filter(|(t, _)| ref_days.contains_key(t)).count();

    let mut months: BTreeMap<String, Vec<(Timestamp, f64)>> = BTreeMap::new();
    for p in sr.iter().filter(|(t, _)| ref_days.contains_key(t)) {
        months.entry(month_key(p.0)).or_default().push(*p);
    }
    let mut csv = String::from("period,n_days,rmse,mae\n");
    let _ = writeln!(csv, "all,{shared},{},{}", overall.0, overall.1);
    for (month, pts) in &months {
        let _ = writeln!(
            csv,
            "{month},{},{},{}",
            pts.len(),
            rmse(pts, &reference)?,
            mae(pts, &reference)?
        );
    }
    print!("{csv}");
    if let Some(out) = &a.out {
        write(out, &csv)?;
    }
    Ok(())
}

/// Minimal reader for the trends CSV this tool writes.
fn read_trends(path: &Path) -> anyhow::Result<Vec<(Timestamp, Timestamp, f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| soilscope::Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parsed = (|| {
            Some((
                Timestamp::parse(f.first()?)?,
                Timestamp::parse(f.get(1)?)?,
                f.get(2)?.parse().ok()?,
                f.get(3)?.parse().ok()?,
            ))
        })();
        match parsed {
            Some(row) => out.push(row),
            None => bail!(soilscope::Error::MalformedFile(format!(
                "{}: line {}",
                path.display(),
                i + 1
            ))),
        }
    }
    Ok(out)
}

fn read_event_markers(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| soilscope::Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| soilscope::Error::MalformedFile(format!("{}: {e}", path.display())))?;
        let field = |k: &str| match &v[k] {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Null => String::new(),
            other => other.to_string(),
        };
        rows.push(format!(
            "{},{},{},{},{}",
            field("start"),
            field("end"),
            field("kind"),
            field("status"),
            field("score")
        ));
    }
    Ok(rows)
}

fn cmd_report(a: &ReportArgs) -> anyhow::Result<()> {
    if !(a.smooth_days > 0.0) {
        return Err(Usage("--smooth-days must be positive".into()).into());
    }
    let sr = read_value_series(&a.sr, Some("sr_clipped"))?;
    create_dir(&a.out)?;
    let ts: Vec<Timestamp> = sr.iter().map(|p| p.0).collect();
    let vals: Vec<f64> = sr.iter().map(|p| p.1).collect();
    let smooth = rolling_median(&ts, &vals, Span::fractional_days(a.smooth_days));
    let mut display = String::from("timestamp,sr_clipped,sr_display\n");
    for i in 0..ts.len() {
        let _ = writeln!(display, "{},{},{}", ts[i], vals[i], smooth[i]);
    }
    let mut written = vec![write(&a.out.join("sr_display.csv"), &display)?];

    if let Some(path) = &a.derate {
        let derate: BTreeMap<Timestamp, f64> = daily_median(&read_value_series(path, None)?).into_iter().collect();
        let mut overlay = String::from("date,sr_daily,derate\n");
        for (day, v) in daily_median(&sr) {
            let d = derate.get(&day).map_or(String::new(), f64::to_string);
            let _ = writeln!(overlay, "{},{v},{d}", day.date());
        }
        written.push(write(&a.out.join("derate_overlay.csv"), &overlay)?);
    }

    let mut markers = Vec::new();
    if let Some(path) = &a.events {
        markers.extend(read_event_markers(path)?);
    }
    if let Some(path) = &a.cleanings {
        for c in load_cleanings(path)? {
            markers.push(format!("{},{},manual_cleaning,,", c.start, c.end));
        }
    }
    if a.events.is_some() || a.cleanings.is_some() {
        let body: String = markers.iter().map(|r| format!("{r}\n")).collect();
        written.push(write(&a.out.join("event_markers.csv"), &format!("start,end,kind,status,score\n{body}"))?);
    }

    if let Some(path) = &a.trends {
        let mut lines = String::from("segment_start,segment_end,sr_start,sr_end,slope_per_day\n");
        for (start, end, slope, intercept) in read_trends(path)? {
            let sr_end = intercept + slope * (end - start).as_days();
            let _ = writeln!(lines, "{start},{end},{intercept},{sr_end},{slope}");
        }
        written.push(write(&a.out.join("trend_lines.csv"), &lines)?);
    }
    for p in &written {
        println!("{}", p.display());
    }
    let mut m = Manifest::new("report", 0);
    m.config = vec![format!("smooth_days = {}", a.smooth_days)];
    for p in [Some(&a.sr), a.trends.as_ref(), a.events.as_ref(), a.cleanings.as_ref(), a.derate.as_ref()]
        .into_iter()
        .flatten()
    {
        m.add_input(p)?;
    }
    m.outputs = written;
    m.write(&a.out)?;
    Ok(())
}
