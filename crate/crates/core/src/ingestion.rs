//! Telemetry and cleaning-date parsing, min-max scaling and rain extraction.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EventInterval, EventKind, Span, TelemetryRecord, TelemetrySeries, Timestamp};

/// Maps the logical telemetry channels onto CSV header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub power: String,
    pub irradiance: String,
    pub module_temp: String,
    pub precipitation: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp: "timestamp".into(),
            power: "power_w".into(),
            irradiance: "irradiance_wm2".into(),
            module_temp: "module_temp_c".into(),
            precipitation: "precipitation_mm".into(),
        }
    }
}

/// How the precipitation column is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecipMode {
    /// Amount fallen during each record interval.
    #[default]
    Instant,
    /// Running total that resets (e.g. at midnight); converted to increments.
    Accumulated,
}

impl std::str::FromStr for PrecipMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instant" => Ok(PrecipMode::Instant),
            "accumulated" => Ok(PrecipMode::Accumulated),
            other => Err(Error::InvalidConfig(format!("unknown precipitation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParseOptions {
    pub schema: CsvSchema,
    /// Nominal sampling interval; inferred from the median step when absent.
    pub cadence: Option<Span>,
    pub precip_mode: PrecipMode,
    /// Rows with irradiance strictly below this are dropped.
    pub min_irradiance: f64,
}

#[derive(Debug, Clone)]
pub struct ParsedTelemetry {
    pub series: TelemetrySeries,
    /// Rows dropped for missing, non-finite or negative values.
    pub dropped_invalid: usize,
    /// Rows dropped by the irradiance floor.
    pub dropped_low_irradiance: usize,
}

pub fn parse_telemetry(path: &Path, opts: &ParseOptions) -> Result<ParsedTelemetry> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_telemetry(file, opts)
}

pub fn read_telemetry<R: Read>(reader: R, opts: &ParseOptions) -> Result<ParsedTelemetry> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedFile(e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedFile(format!("missing column `{name}`")))
    };
    let schema = &opts.schema;
    let cols = [
        column(&schema.timestamp)?,
        column(&schema.power)?,
        column(&schema.irradiance)?,
        column(&schema.module_temp)?,
        column(&schema.precipitation)?,
    ];

    let mut rows: Vec<TelemetryRecord> = Vec::new();
    let mut dropped_invalid = 0;
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::MalformedFile(format!("row {}: {e}", line + 2)))?;
        let ts_text = row.get(cols[0]).unwrap_or("");
        let ts = Timestamp::parse(ts_text).ok_or_else(|| {
            Error::MalformedFile(format!("row {}: bad timestamp `{ts_text}`", line + 2))
        })?;
        let value = |i: usize| -> f64 {
            row.get(cols[i])
                .and_then(|s| s.parse::<f64>().ok())
                .unwrap_or(f64::NAN)
        };
        let record = TelemetryRecord {
            ts,
            power: value(1),
            irradiance: value(2),
            module_temp: value(3),
            precipitation: value(4),
        };
        if record.is_valid() {
            rows.push(record);
        } else {
            dropped_invalid += 1;
        }
    }

    // Monotonicity is a property of the file, checked before any filtering
    // can hide a duplicate.
    for pair in rows.windows(2) {
        if pair[1].ts <= pair[0].ts {
            return Err(Error::NonMonotonicTimestamps { at: pair[1].ts });
        }
    }

    if opts.precip_mode == PrecipMode::Accumulated {
        accumulated_to_increments(&mut rows);
    }

    let before = rows.len();
    rows.retain(|r| r.irradiance >= opts.min_irradiance);
    let dropped_low_irradiance = before - rows.len();

    if rows.is_empty() {
        return Err(Error::EmptySeries);
    }
    let cadence = match opts.cadence {
        Some(c) => c,
        None => infer_cadence(&rows),
    };
    Ok(ParsedTelemetry {
        series: TelemetrySeries::new(rows, cadence)?,
        dropped_invalid,
        dropped_low_irradiance,
    })
}

/// Converts a resetting running total into per-record increments. A drop in
/// the accumulator marks a reset, so the new reading is itself the increment.
fn accumulated_to_increments(rows: &mut [TelemetryRecord]) {
    let mut prev: Option<f64> = None;
    for r in rows.iter_mut() {
        let acc = r.precipitation;
        r.precipitation = match prev {
            None => 0.0,
            Some(p) if acc >= p => acc - p,
            Some(_) => acc,
        };
        prev = Some(acc);
    }
}

fn infer_cadence(rows: &[TelemetryRecord]) -> Span {
    let mut steps: Vec<i64> = rows.windows(2).map(|w| (w[1].ts - w[0].ts).as_secs()).collect();
    if steps.is_empty() {
        return Span::minutes(5);
    }
    let mid = steps.len() / 2;
    let (_, median, _) = steps.select_nth_unstable(mid);
    Span::seconds(*median)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScale {
    pub min: f64,
    pub range: f64,
}

impl ChannelScale {
    fn fit(values: impl Iterator<Item = f64>, name: &'static str) -> Result<Self> {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let range = hi - lo;
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::DegenerateChannel(name));
        }
        Ok(ChannelScale { min: lo, range })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / self.range
    }

    pub fn invert(&self, scaled: f64) -> f64 {
        scaled * self.range + self.min
    }
}

/// Min-max parameters for the three modelled channels. Precipitation is
/// never scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub power: ChannelScale,
    pub irradiance: ChannelScale,
    pub module_temp: ChannelScale,
}

pub fn fit_scaler(series: &TelemetrySeries) -> Result<ScalerParams> {
    let recs = series.records();
    Ok(ScalerParams {
        power: ChannelScale::fit(recs.iter().map(|r| r.power), "power")?,
        irradiance: ChannelScale::fit(recs.iter().map(|r| r.irradiance), "irradiance")?,
        module_temp: ChannelScale::fit(recs.iter().map(|r| r.module_temp), "module_temp")?,
    })
}

/// Maximal runs of consecutive records with positive precipitation, kept
/// only when the run's peak exceeds `min_rain_peak`.
pub fn extract_rains(series: &TelemetrySeries, min_rain_peak: f64) -> Vec<EventInterval> {
    let recs = series.records();
    let mut rains = Vec::new();
    let mut i = 0;
    while i < recs.len() {
        if recs[i].precipitation > 0.0 {
            let start = i;
            let mut peak = 0.0f64;
            while i < recs.len() && recs[i].precipitation > 0.0 {
                peak = peak.max(recs[i].precipitation);
                i += 1;
            }
            if peak > min_rain_peak {
                rains.push(
                    EventInterval::new(recs[start].ts, recs[i - 1].ts, EventKind::Rain)
                        .expect("sorted timestamps"),
                );
            }
        } else {
            i += 1;
        }
    }
    rains
}

pub fn load_cleanings(path: &Path) -> Result<Vec<EventInterval>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cleanings(&text)
}

/// One date or `start,end` pair per line; `#` starts a comment. A bare
/// date covers the whole UTC day.
pub fn parse_cleanings(text: &str) -> Result<Vec<EventInterval>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = n + 1;
        let bad = || Error::MalformedDate {
            line: lineno,
            text: line.to_string(),
        };
        let (start, end) = match line.split_once(',') {
            Some((a, b)) => (
                parse_bound(a, false).ok_or_else(bad)?,
                parse_bound(b, true).ok_or_else(bad)?,
            ),
            None => (
                parse_bound(line, false).ok_or_else(bad)?,
                parse_bound(line, true).ok_or_else(bad)?,
            ),
        };
        out.push(EventInterval::new(start, end, EventKind::ManualCleaning).map_err(|_| bad())?);
    }
    out.sort_by_key(|e| (e.start, e.end));
    Ok(out)
}

fn parse_bound(text: &str, is_end: bool) -> Option<Timestamp> {
    let text = text.trim();
    if let Ok(date) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        let day = Timestamp::from_date(date);
        return Some(if is_end {
            day + Span::days(1) - Span::seconds(1)
        } else {
            day
        });
    }
    Timestamp::parse(text)
}
