//! Text formats written and read by the command-line tools.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::detectors::EventScoreReport;
use crate::error::{Error, Result};
use crate::estimation::{SegmentTrend, SoilingRatioSeries};
use crate::metrics::median_in_place;
use crate::types::{EventInterval, TelemetrySeries, Timestamp};

pub const SR_HEADER: &str = "timestamp,sr_raw,sr_clipped,sr_smoothed,floored_flag";
pub const TRENDS_HEADER: &str = "segment_start,segment_end,slope_per_day,intercept,n_points,negative_flag";

pub fn reports_jsonl(reports: &[EventScoreReport]) -> String {
    reports.iter().map(|r| r.to_json_line() + "\n").collect()
}

pub fn sr_csv(sr: &SoilingRatioSeries) -> String {
    let mut out = format!("{SR_HEADER}\n");
    for i in 0..sr.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            sr.timestamps[i],
            sr.sr_raw[i],
            sr.sr_clipped[i],
            sr.sr_smoothed[i],
            u8::from(sr.floored[i])
        );
    }
    out
}

pub fn trends_csv(trends: &[SegmentTrend]) -> String {
    let mut out = format!("{TRENDS_HEADER}\n");
    for t in trends {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            t.start,
            t.end,
            t.slope_per_day,
            t.intercept,
            t.n_points,
            u8::from(t.negative)
        );
    }
    out
}

pub fn series_csv(points: &[(Timestamp, f64)]) -> String {
    let mut out = String::from("timestamp,value\n");
    for (t, v) in points {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}

/// Same layout as the default ingestion schema.
pub fn telemetry_csv(series: &TelemetrySeries) -> String {
    let mut out = String::from("timestamp,power_w,irradiance_wm2,module_temp_c,precipitation_mm\n");
    for r in series.records() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.ts, r.power, r.irradiance, r.module_temp, r.precipitation
        );
    }
    out
}

/// One `start,end` line per event, readable as a cleaning log.
pub fn events_text(events: &[EventInterval]) -> String {
    events.iter().map(|e| format!("{},{}\n", e.start, e.end)).collect()
}

/// Reads a `(timestamp, value)` series from a CSV with a header. The value
/// is taken from `column` when given, otherwise from the second column.
pub fn parse_value_series(text: &str, column: Option<&str>) -> Result<Vec<(Timestamp, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::MalformedFile(e.to_string()))?.clone();
    let col = match column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedFile(format!("missing column `{name}`")))?,
        None if headers.len() >= 2 => 1,
        None => return Err(Error::MalformedFile("expected at least two columns".into())),
    };
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::MalformedFile(e.to_string()))?;
        let line = i + 2;
        let ts_text = row.get(0).unwrap_or("");
        let ts = Timestamp::parse(ts_text)
            .or_else(|| Timestamp::parse(&format!("{ts_text}T00:00:00Z")))
            .ok_or_else(|| Error::MalformedDate {
                line,
                text: ts_text.to_string(),
            })?;
        let value: f64 = row
            .get(col)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::MalformedFile(format!("line {line}: bad value")))?;
        if value.is_finite() {
            out.push((ts, value));
        }
    }
    Ok(out)
}

pub fn read_value_series(path: &Path, column: Option<&str>) -> Result<Vec<(Timestamp, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_value_series(&text, column)
}

/// Median of the values falling on each UTC calendar day, stamped at
/// midnight.
pub fn daily_median(points: &[(Timestamp, f64)]) -> Vec<(Timestamp, f64)> {
    let mut days: BTreeMap<chrono::NaiveDate, Vec<f64>> = BTreeMap::new();
    for (t, v) in points {
        days.entry(t.date()).or_default().push(*v);
    }
    days.into_iter()
        .map(|(d, mut v)| (Timestamp::from_date(d), median_in_place(&mut v).expect("non-empty")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Span;

    #[test]
    fn daily_median_groups_by_day() {
        let t0 = Timestamp::parse("2020-03-01T00:00:00Z").unwrap();
        let pts = vec![
            (t0 + Span::seconds(3600), 0.9),
            (t0 + Span::seconds(7200), 0.7),
            (t0 + Span::seconds(9000), 0.8),
            (t0 + Span::days(1), 0.5),
            (t0 + Span::days(1) + Span::seconds(60), 0.6),
        ];
        let d = daily_median(&pts);
        assert_eq!(d, vec![(t0, 0.8), (t0 + Span::days(1), 0.55)]);
    }

    #[test]
    fn value_series_round_trip() {
        let t0 = Timestamp::parse("2020-03-01T00:00:00Z").unwrap();
        let pts = vec![(t0, 0.25), (t0 + Span::days(1), 1.0 / 3.0)];
        assert_eq!(parse_value_series(&series_csv(&pts), None).unwrap(), pts);
        let by_name = parse_value_series("date,x,y\n2020-03-01,1,2\n", Some("y")).unwrap();
        assert_eq!(by_name, vec![(t0, 2.0)]);
        assert!(parse_value_series("date,x\n2020-03-01,1\n", Some("y")).is_err());
        assert!(matches!(
            parse_value_series("date,x\nyesterday,1\n", None),
            Err(Error::MalformedDate { line: 2, .. })
        ));
    }
}
