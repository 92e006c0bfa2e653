//! Soiling-ratio estimation from a clean-performance model, plus the
//! post-processing and per-segment trend fits applied to the estimate.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{union_indices, EPS_POWER};
use crate::error::{Error, Result};
use crate::ingestion::ScalerParams;
use crate::metrics::median_in_place;
use crate::regression::{n_features, RidgeModel};
use crate::types::{DetectorConfig, EventInterval, Span, TelemetrySeries, Timestamp};

/// Above this many points Theil-Sen samples pairs instead of enumerating.
pub const THEIL_SEN_EXACT_LIMIT: usize = 1000;
pub const THEIL_SEN_PAIR_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Fcse,
    Bcse,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Fcse => "fcse",
            Method::Bcse => "bcse",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Method::Baseline),
            "fcse" => Ok(Method::Fcse),
            "bcse" => Ok(Method::Bcse),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub method: Method,
    pub config: DetectorConfig,
    pub training_intervals: Vec<EventInterval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoilingRatioSeries {
    pub timestamps: Vec<Timestamp>,
    pub sr_raw: Vec<f64>,
    pub sr_clipped: Vec<f64>,
    pub sr_smoothed: Vec<f64>,
    /// Prediction was at or below the power floor; the ratio is a guard
    /// value, not a measurement.
    pub floored: Vec<bool>,
    pub provenance: Provenance,
}

impl SoilingRatioSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn clipped_points(&self) -> Vec<(Timestamp, f64)> {
        self.timestamps.iter().copied().zip(self.sr_clipped.iter().copied()).collect()
    }
}

/// Indices inside `[t', t'+w_train]` over all events, each counted once.
pub fn build_training_set(
    events: &[EventInterval],
    w_train_days: u32,
    series: &TelemetrySeries,
) -> Result<BTreeSet<usize>> {
    let idx = union_indices(series, events, Span::days(i64::from(w_train_days)));
    if idx.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    Ok(idx)
}

pub fn estimate_soiling_ratio(
    series: &TelemetrySeries,
    scaler: &ScalerParams,
    training: &BTreeSet<usize>,
    cfg: &DetectorConfig,
    smooth_window: Span,
    provenance: Provenance,
) -> Result<SoilingRatioSeries> {
    if training.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let need = n_features(cfg.poly_degree);
    if training.len() < need {
        return Err(Error::InsufficientData {
            have: training.len(),
            need,
        });
    }
    let model = RidgeModel::fit(series, training.iter().copied(), scaler, cfg.poly_degree, cfg.ridge_alpha)?
        .with_intervals(provenance.training_intervals.clone());
    Ok(soiling_ratio_from_model(series, &model, smooth_window, provenance))
}

pub fn soiling_ratio_from_model(
    series: &TelemetrySeries,
    model: &RidgeModel,
    smooth_window: Span,
    provenance: Provenance,
) -> SoilingRatioSeries {
    let n = series.len();
    let mut sr_raw = Vec::with_capacity(n);
    let mut floored = Vec::with_capacity(n);
    for r in series.records() {
        let pred = model.predict_power(r);
        let low = !(pred > EPS_POWER);
        floored.push(low);
        sr_raw.push(r.power / if low { EPS_POWER } else { pred });
    }
    let timestamps: Vec<Timestamp> = series.timestamps().collect();
    let (sr_clipped, sr_smoothed) = postprocess(&timestamps, &sr_raw, smooth_window);
    SoilingRatioSeries {
        timestamps,
        sr_raw,
        sr_clipped,
        sr_smoothed,
        floored,
        provenance,
    }
}

/// Clamps to `[0, 1]` and applies a centred rolling median over
/// `window`, truncated at the series edges.
pub fn postprocess(timestamps: &[Timestamp], sr_raw: &[f64], window: Span) -> (Vec<f64>, Vec<f64>) {
    let clipped: Vec<f64> = sr_raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let smoothed = rolling_median(timestamps, &clipped, window);
    (clipped, smoothed)
}

/// Centred time-based rolling median: each output is the median of the
/// values whose timestamps lie within `window / 2` of the point.
pub fn rolling_median(timestamps: &[Timestamp], values: &[f64], window: Span) -> Vec<f64> {
    let half = Span::seconds(window.as_secs() / 2);
    let mut sorted: Vec<f64> = Vec::new();
    let mut out = Vec::with_capacity(values.len());
    let (mut lo, mut hi) = (0usize, 0usize);
    for &t in timestamps {
        while hi < values.len() && timestamps[hi] <= t + half {
            let v = values[hi];
            let pos = sorted.partition_point(|x| x.total_cmp(&v).is_lt());
            sorted.insert(pos, v);
            hi += 1;
        }
        while timestamps[lo] < t - half {
            let v = values[lo];
            let pos = sorted.partition_point(|x| x.total_cmp(&v).is_lt());
            sorted.remove(pos);
            lo += 1;
        }
        let n = sorted.len();
        out.push(if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        });
    }
    out
}

/// Median pairwise slope and median intercept of `(x, y)` points.
pub fn theil_sen(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    theil_sen_with(points, 0)
}

pub fn theil_sen_with(points: &[(f64, f64)], seed: u64) -> Result<(f64, f64)> {
    let n = points.len();
    let mut slopes: Vec<f64> = Vec::new();
    if n <= THEIL_SEN_EXACT_LIMIT {
        slopes.reserve(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let (xi, yi) = points[i];
                let (xj, yj) = points[j];
                if xi != xj {
                    slopes.push((yj - yi) / (xj - xi));
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut attempts = 0usize;
        slopes.reserve(THEIL_SEN_PAIR_SAMPLES);
        while slopes.len() < THEIL_SEN_PAIR_SAMPLES && attempts < 20 * THEIL_SEN_PAIR_SAMPLES {
            attempts += 1;
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let (xi, yi) = points[i];
            let (xj, yj) = points[j];
            if xi != xj {
                slopes.push((yj - yi) / (xj - xi));
            }
        }
    }
    let slope = median_in_place(&mut slopes).ok_or(Error::DegenerateSegment)?;
    let mut intercepts: Vec<f64> = points.iter().map(|&(x, y)| y - slope * x).collect();
    let intercept = median_in_place(&mut intercepts).ok_or(Error::DegenerateSegment)?;
    Ok((slope, intercept))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentTrend {
    pub start: Timestamp,
    pub end: Timestamp,
    /// SR units per day.
    pub slope_per_day: f64,
    /// Fitted SR at `start`.
    pub intercept: f64,
    pub n_points: usize,
    pub negative: bool,
}

impl SegmentTrend {
    /// Fitted SR at `end`.
    pub fn value_at_end(&self) -> f64 {
        self.intercept + self.slope_per_day * (self.end - self.start).as_days()
    }
}

/// Theil-Sen lines on the clipped SR between consecutive events, plus the
/// leading and trailing stretches. Event interiors and floored points are
/// excluded; segments with fewer than two usable points are skipped.
pub fn segment_trends(sr: &SoilingRatioSeries, events: &[EventInterval], seed: u64) -> Vec<SegmentTrend> {
    if sr.is_empty() {
        return Vec::new();
    }
    let mut events = events.to_vec();
    events.sort_by_key(|e| (e.start, e.end));

    let first = sr.timestamps[0];
    let last = sr.timestamps[sr.len() - 1];
    // (start, end, start inclusive, end inclusive)
    let mut bounds = Vec::with_capacity(events.len() + 1);
    let mut cursor = (first, true);
    for e in &events {
        bounds.push((cursor.0, e.start, cursor.1, false));
        cursor = (e.end, false);
    }
    bounds.push((cursor.0, last, cursor.1, true));

    bounds
        .par_iter()
        .filter_map(|&(start, end, start_incl, end_incl)| {
            if end < start {
                return None;
            }
            let lo = if start_incl {
                sr.timestamps.partition_point(|t| *t < start)
            } else {
                sr.timestamps.partition_point(|t| *t <= start)
            };
            let hi = if end_incl {
                sr.timestamps.partition_point(|t| *t <= end)
            } else {
                sr.timestamps.partition_point(|t| *t < end)
            };
            let points: Vec<(f64, f64)> = (lo..hi.max(lo))
                .filter(|&i| !sr.floored[i])
                .map(|i| (sr.timestamps[i].days_since(start), sr.sr_clipped[i]))
                .collect();
            if points.len() < 2 {
                return None;
            }
            let (slope, intercept) = theil_sen_with(&points, seed).ok()?;
            Some(SegmentTrend {
                start,
                end,
                slope_per_day: slope,
                intercept,
                n_points: points.len(),
                negative: slope < 0.0,
            })
        })
        .collect()
}
