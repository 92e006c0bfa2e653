//! Shared domain types: timestamps, telemetry records, candidate cleaning
//! events and the detector configuration.

use std::fmt;
use std::ops::{Add, Range, Sub};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// An absolute UTC instant with one-second resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_unix(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub const fn unix(self) -> i64 {
        self.0
    }

    pub fn from_date(date: NaiveDate) -> Self {
        Timestamp(date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp())
    }

    pub fn date(self) -> NaiveDate {
        self.to_datetime().date_naive()
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0, 0).expect("timestamp out of chrono range")
    }

    /// Fractional days elapsed since `origin`.
    pub fn days_since(self, origin: Timestamp) -> f64 {
        (self.0 - origin.0) as f64 / SECONDS_PER_DAY as f64
    }

    /// Parses RFC 3339 (any offset, normalized to UTC), or a naive
    /// `YYYY-MM-DD[T| ]HH:MM[:SS]` which is taken to be UTC already.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
            return Some(Timestamp(dt.timestamp()));
        }
        for fmt in [
            "%Y-%m-%dT%H:%M:%S",
            "%Y-%m-%d %H:%M:%S",
            "%Y-%m-%dT%H:%M",
            "%Y-%m-%d %H:%M",
        ] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
                return Some(Timestamp(dt.and_utc().timestamp()));
            }
        }
        None
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_datetime().format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Timestamp::parse(&text)
            .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp `{text}`")))
    }
}

/// A signed length of time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span(i64);

impl Span {
    pub const fn seconds(secs: i64) -> Self {
        Span(secs)
    }

    pub const fn minutes(m: i64) -> Self {
        Span(m * 60)
    }

    pub const fn days(d: i64) -> Self {
        Span(d * SECONDS_PER_DAY)
    }

    pub fn fractional_days(d: f64) -> Self {
        Span((d * SECONDS_PER_DAY as f64).round() as i64)
    }

    pub const fn as_secs(self) -> i64 {
        self.0
    }

    pub fn as_days(self) -> f64 {
        self.0 as f64 / SECONDS_PER_DAY as f64
    }
}

impl Add<Span> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: Span) -> Timestamp {
        Timestamp(self.0 + rhs.0)
    }
}

impl Sub<Span> for Timestamp {
    type Output = Timestamp;
    fn sub(self, rhs: Span) -> Timestamp {
        Timestamp(self.0 - rhs.0)
    }
}

impl Sub for Timestamp {
    type Output = Span;
    fn sub(self, rhs: Timestamp) -> Span {
        Span(self.0 - rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRecord {
    pub ts: Timestamp,
    /// Watts.
    pub power: f64,
    /// Watts per square metre.
    pub irradiance: f64,
    /// Degrees Celsius.
    pub module_temp: f64,
    /// Millimetres per record.
    pub precipitation: f64,
}

impl TelemetryRecord {
    pub fn is_valid(&self) -> bool {
        self.power.is_finite()
            && self.irradiance.is_finite()
            && self.module_temp.is_finite()
            && self.precipitation.is_finite()
            && self.power >= 0.0
            && self.irradiance >= 0.0
            && self.precipitation >= 0.0
    }
}

/// Which endpoints of `[start, end]` a window includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bounds {
    /// `[start, end]`
    Closed,
    /// `[start, end)`
    ClosedOpen,
    /// `(start, end]`
    OpenClosed,
}

/// Validated telemetry: strictly increasing timestamps, finite values.
/// Gaps (e.g. night hours) are allowed and never interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetrySeries {
    records: Vec<TelemetryRecord>,
    cadence: Span,
}

impl TelemetrySeries {
    pub fn new(records: Vec<TelemetryRecord>, cadence: Span) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptySeries);
        }
        if cadence.as_secs() <= 0 {
            return Err(Error::InvalidConfig("cadence must be positive".into()));
        }
        for pair in records.windows(2) {
            if pair[1].ts <= pair[0].ts {
                return Err(Error::NonMonotonicTimestamps { at: pair[1].ts });
            }
        }
        if let Some(bad) = records.iter().find(|r| !r.is_valid()) {
            return Err(Error::MalformedFile(format!(
                "record at {} has non-finite or negative values",
                bad.ts
            )));
        }
        Ok(TelemetrySeries { records, cadence })
    }

    pub fn records(&self) -> &[TelemetryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cadence(&self) -> Span {
        self.cadence
    }

    pub fn first_ts(&self) -> Timestamp {
        self.records[0].ts
    }

    pub fn last_ts(&self) -> Timestamp {
        self.records[self.records.len() - 1].ts
    }

    pub fn timestamps(&self) -> impl Iterator<Item = Timestamp> + '_ {
        self.records.iter().map(|r| r.ts)
    }

    /// Indices of records whose timestamps fall inside the window. Because
    /// timestamps are sorted the result is always a contiguous range.
    pub fn interval_points(&self, start: Timestamp, end: Timestamp, bounds: Bounds) -> Range<usize> {
        let lo = match bounds {
            Bounds::Closed | Bounds::ClosedOpen => self.records.partition_point(|r| r.ts < start),
            Bounds::OpenClosed => self.records.partition_point(|r| r.ts <= start),
        };
        let hi = match bounds {
            Bounds::Closed | Bounds::OpenClosed => self.records.partition_point(|r| r.ts <= end),
            Bounds::ClosedOpen => self.records.partition_point(|r| r.ts < end),
        };
        lo..hi.max(lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Rain,
    ManualCleaning,
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Candidate,
    Invalid,
    Detected,
    Rejected,
}

/// A closed interval `[start, end]` that may contain a cleaning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventInterval {
    pub start: Timestamp,
    pub end: Timestamp,
    pub kind: EventKind,
    pub score: Option<f64>,
    pub status: EventStatus,
}

impl EventInterval {
    pub fn new(start: Timestamp, end: Timestamp, kind: EventKind) -> Result<Self> {
        if end < start {
            return Err(Error::InvertedInterval { start, end });
        }
        Ok(EventInterval {
            start,
            end,
            kind,
            score: None,
            status: EventStatus::Candidate,
        })
    }

    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts <= self.end
    }
}

/// Sorted union of manual cleanings and rains. Intervals that overlap or
/// share an endpoint are coalesced; a coalesced interval drawing on both
/// sources is tagged [`EventKind::Merged`].
pub fn merge_events(cleanings: &[EventInterval], rains: &[EventInterval]) -> Vec<EventInterval> {
    let mut all: Vec<EventInterval> = cleanings.iter().chain(rains).copied().collect();
    all.sort_by_key(|e| (e.start, e.end));

    let mut out: Vec<EventInterval> = Vec::with_capacity(all.len());
    for ev in all {
        match out.last_mut() {
            Some(cur) if ev.start <= cur.end => {
                cur.end = cur.end.max(ev.end);
                if cur.kind != ev.kind {
                    cur.kind = EventKind::Merged;
                }
            }
            _ => out.push(EventInterval {
                score: None,
                status: EventStatus::Candidate,
                ..ev
            }),
        }
    }
    out
}

/// Window lengths and model settings shared by the detectors and the
/// final estimator.
///
/// `w1`, `w2`, `w3` are interpreted per method. For forward checking they
/// are the training, validation and test lengths; for backward checking
/// they are the before-window, after-window and clean-model window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub w1: u32,
    pub w2: u32,
    pub w3: u32,
    pub q: f64,
    pub w_train: u32,
    pub mape_gate: f64,
    pub poly_degree: usize,
    pub ridge_alpha: f64,
    pub min_rain_peak: f64,
    pub min_irradiance: f64,
    /// Seeds the pair subsampling used by very long windows.
    pub seed: u64,
}

impl DetectorConfig {
    pub fn fcse() -> Self {
        DetectorConfig {
            w1: 10,
            w2: 5,
            w3: 10,
            q: 0.9,
            w_train: 30,
            mape_gate: 0.05,
            poly_degree: 3,
            ridge_alpha: 1e-4,
            min_rain_peak: 0.1,
            min_irradiance: 0.0,
            seed: 0,
        }
    }

    pub fn bcse() -> Self {
        DetectorConfig {
            w1: 5,
            w2: 10,
            w3: 30,
            ..Self::fcse()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.w1 == 0 || self.w2 == 0 || self.w3 == 0 || self.w_train == 0 {
            return bad("window lengths must be at least one day");
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad("q must lie in (0, 1)");
        }
        if !(self.mape_gate > 0.0) {
            return bad("mape_gate must be positive");
        }
        if self.poly_degree == 0 {
            return bad("poly_degree must be at least 1");
        }
        if !(self.ridge_alpha > 0.0 && self.ridge_alpha.is_finite()) {
            return bad("ridge_alpha must be positive");
        }
        if !self.min_rain_peak.is_finite() || !self.min_irradiance.is_finite() {
            return bad("thresholds must be finite");
        }
        Ok(())
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::fcse()
    }
}
