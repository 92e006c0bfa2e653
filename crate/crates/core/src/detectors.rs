//! Cleaning-event classification.
//!
//! Both detectors turn each candidate interval `[t, t']` into a score: the
//! median over all pairs of post-event performance index divided by
//! pre-event performance index, where the performance index is actual power
//! over predicted power. Genuine cleanings score above 1. Candidates whose
//! model fails the accuracy gate, or whose windows fall outside the data,
//! are marked invalid and take no part in thresholding. The remaining
//! candidates are detected when their score exceeds the `q`-quantile of all
//! valid scores.
//!
//! The forward-checking detector fits one model per candidate on
//! `[t-w1-w2, t-w2)`, validates it on `[t-w2, t)` and tests on `(t', t'+w3]`.
//! The backward-checking detector fits a single clean-performance model on
//! the union of `[t', t'+w3]` after known manual cleanings, gates on the
//! after-window `(t', t'+w2]` and compares it with `[t-w1, t)`.

use std::collections::BTreeSet;
use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingestion::ScalerParams;
use crate::metrics::{mape0, mede_with, quantile, MEDE_PAIR_CAP};
use crate::regression::{n_features, RidgeModel};
use crate::types::{
    Bounds, DetectorConfig, EventInterval, EventKind, EventStatus, Span, TelemetrySeries,
    Timestamp,
};

/// Predictions at or below this many watts are excluded from performance
/// index windows.
pub const EPS_POWER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    OutOfRange,
    EmptyWindow,
    GateFailed,
    BelowQuantile,
    Detected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowRole {
    Train,
    Validate,
    Test,
    Before,
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Window {
    pub role: WindowRole,
    pub start: Timestamp,
    pub end: Timestamp,
    #[serde(skip)]
    pub bounds: Bounds,
}

impl Window {
    fn new(role: WindowRole, start: Timestamp, end: Timestamp, bounds: Bounds) -> Self {
        Window {
            role,
            start,
            end,
            bounds,
        }
    }

    fn points(&self, series: &TelemetrySeries) -> Range<usize> {
        series.interval_points(self.start, self.end, self.bounds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventScoreReport {
    pub event: EventInterval,
    pub score: Option<f64>,
    pub validation_mape: Option<f64>,
    pub windows: Vec<Window>,
    pub status: EventStatus,
    pub reason: Option<Reason>,
}

impl EventScoreReport {
    fn new(event: &EventInterval, windows: Vec<Window>) -> Self {
        EventScoreReport {
            event: EventInterval {
                score: None,
                status: EventStatus::Candidate,
                ..*event
            },
            score: None,
            validation_mape: None,
            windows,
            status: EventStatus::Candidate,
            reason: None,
        }
    }

    fn invalid(mut self, reason: Reason) -> Self {
        self.status = EventStatus::Invalid;
        self.reason = Some(reason);
        self.score = None;
        self.event.status = EventStatus::Invalid;
        self.event.score = None;
        self
    }

    fn scored(mut self, score: f64) -> Self {
        self.score = Some(score);
        self.event.score = Some(score);
        self
    }

    pub fn is_valid(&self) -> bool {
        self.status != EventStatus::Invalid && self.score.is_some()
    }

    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line {
            start: Timestamp,
            end: Timestamp,
            kind: EventKind,
            status: EventStatus,
            score: Option<f64>,
            validation_mape: Option<f64>,
            reason: Option<Reason>,
        }
        serde_json::to_string(&Line {
            start: self.event.start,
            end: self.event.end,
            kind: self.event.kind,
            status: self.status,
            score: self.score,
            validation_mape: self.validation_mape,
            reason: self.reason,
        })
        .expect("report serializes")
    }
}

/// Result of a detection pass over all candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// One report per candidate, sorted by event start.
    pub reports: Vec<EventScoreReport>,
    pub threshold: f64,
}

impl Detection {
    pub fn detected(&self) -> Vec<EventInterval> {
        self.reports
            .iter()
            .filter(|r| r.status == EventStatus::Detected)
            .map(|r| r.event)
            .collect()
    }

    pub fn count(&self, status: EventStatus) -> usize {
        self.reports.iter().filter(|r| r.status == status).count()
    }
}

/// Post-event performance relative to pre-event performance.
pub fn recovery_score(pi_pre: &[f64], pi_post: &[f64], seed: u64) -> Result<f64> {
    mede_with(pi_post, pi_pre, MEDE_PAIR_CAP, seed)
}

fn days(d: u32) -> Span {
    Span::days(i64::from(d))
}

/// Actual over predicted power on the window, skipping floored predictions.
fn performance_index(model: &RidgeModel, series: &TelemetrySeries, idx: Range<usize>) -> Vec<f64> {
    series.records()[idx]
        .iter()
        .filter_map(|r| {
            let pred = model.predict_power(r);
            (pred > EPS_POWER).then(|| r.power / pred)
        })
        .collect()
}

fn window_mape(model: &RidgeModel, series: &TelemetrySeries, idx: Range<usize>) -> Result<f64> {
    let recs = &series.records()[idx];
    let actual: Vec<f64> = recs.iter().map(|r| r.power).collect();
    let pred: Vec<f64> = recs.iter().map(|r| model.predict_power(r)).collect();
    mape0(&actual, &pred)
}

fn in_range(series: &TelemetrySeries, earliest: Timestamp, latest: Timestamp) -> bool {
    earliest >= series.first_ts() && latest <= series.last_ts()
}

pub fn score_event_fcse(
    series: &TelemetrySeries,
    scaler: &ScalerParams,
    event: &EventInterval,
    cfg: &DetectorConfig,
) -> EventScoreReport {
    let (t, t_end) = (event.start, event.end);
    let (w1, w2, w3) = (days(cfg.w1), days(cfg.w2), days(cfg.w3));
    let train = Window::new(WindowRole::Train, t - w1 - w2, t - w2, Bounds::ClosedOpen);
    let validate = Window::new(WindowRole::Validate, t - w2, t, Bounds::ClosedOpen);
    let test = Window::new(WindowRole::Test, t_end, t_end + w3, Bounds::OpenClosed);
    let report = EventScoreReport::new(event, vec![train, validate, test]);

    if !in_range(series, train.start, test.end) {
        return report.invalid(Reason::OutOfRange);
    }
    let (train_idx, val_idx, test_idx) = (train.points(series), validate.points(series), test.points(series));
    if train_idx.len() < n_features(cfg.poly_degree) || val_idx.is_empty() || test_idx.is_empty() {
        return report.invalid(Reason::EmptyWindow);
    }
    let model = match RidgeModel::fit(series, train_idx, scaler, cfg.poly_degree, cfg.ridge_alpha) {
        Ok(m) => m,
        Err(_) => return report.invalid(Reason::EmptyWindow),
    };
    let vm = match window_mape(&model, series, val_idx.clone()) {
        Ok(v) => v,
        Err(_) => return report.invalid(Reason::EmptyWindow),
    };
    let mut report = report;
    report.validation_mape = Some(vm);
    if vm > cfg.mape_gate {
        return report.invalid(Reason::GateFailed);
    }
    let pi_val = performance_index(&model, series, val_idx);
    let pi_test = performance_index(&model, series, test_idx);
    match recovery_score(&pi_val, &pi_test, cfg.seed) {
        Ok(score) => report.scored(score),
        Err(_) => report.invalid(Reason::EmptyWindow),
    }
}

/// Scores every candidate with a model fitted just before it, then
/// thresholds at the `q`-quantile of valid scores.
pub fn detect_fcse(
    series: &TelemetrySeries,
    scaler: &ScalerParams,
    candidates: &[EventInterval],
    cfg: &DetectorConfig,
) -> Result<Detection> {
    cfg.validate()?;
    let reports = candidates
        .par_iter()
        .map(|ev| score_event_fcse(series, scaler, ev, cfg))
        .collect();
    classify_by_quantile(reports, cfg.q)
}

/// Fits one model on the union of `[t', t'+w3]` over manual cleanings.
pub fn fit_clean_model(
    series: &TelemetrySeries,
    scaler: &ScalerParams,
    cleanings: &[EventInterval],
    cfg: &DetectorConfig,
) -> Result<RidgeModel> {
    if cleanings.is_empty() {
        return Err(Error::NoCleanings);
    }
    let idx = union_indices(series, cleanings, days(cfg.w3));
    let need = n_features(cfg.poly_degree);
    if idx.len() < need {
        return Err(Error::InsufficientData {
            have: idx.len(),
            need,
        });
    }
    Ok(
        RidgeModel::fit(series, idx, scaler, cfg.poly_degree, cfg.ridge_alpha)?
            .with_intervals(cleanings.to_vec()),
    )
}

/// Record indices in `[t', t'+len]` over all events, each counted once.
pub fn union_indices(series: &TelemetrySeries, events: &[EventInterval], len: Span) -> BTreeSet<usize> {
    events
        .iter()
        .flat_map(|e| series.interval_points(e.end, e.end + len, Bounds::Closed))
        .collect()
}

pub fn score_event_bcse(
    clean_model: &RidgeModel,
    series: &TelemetrySeries,
    event: &EventInterval,
    cfg: &DetectorConfig,
) -> EventScoreReport {
    let (t, t_end) = (event.start, event.end);
    let before = Window::new(WindowRole::Before, t - days(cfg.w1), t, Bounds::ClosedOpen);
    let after = Window::new(WindowRole::After, t_end, t_end + days(cfg.w2), Bounds::OpenClosed);
    let report = EventScoreReport::new(event, vec![before, after]);

    if !in_range(series, before.start, after.end) {
        return report.invalid(Reason::OutOfRange);
    }
    let (before_idx, after_idx) = (before.points(series), after.points(series));
    if before_idx.is_empty() || after_idx.is_empty() {
        return report.invalid(Reason::EmptyWindow);
    }
    let vm = match window_mape(clean_model, series, after_idx.clone()) {
        Ok(v) => v,
        Err(_) => return report.invalid(Reason::EmptyWindow),
    };
    let mut report = report;
    report.validation_mape = Some(vm);
    if vm > cfg.mape_gate {
        return report.invalid(Reason::GateFailed);
    }
    let pi_before = performance_index(clean_model, series, before_idx);
    let pi_after = performance_index(clean_model, series, after_idx);
    match recovery_score(&pi_before, &pi_after, cfg.seed) {
        Ok(score) => report.scored(score),
        Err(_) => report.invalid(Reason::EmptyWindow),
    }
}

/// Scores every candidate against one clean-performance model fitted after
/// the manual cleanings, then thresholds at the `q`-quantile.
pub fn detect_bcse(
    series: &TelemetrySeries,
    scaler: &ScalerParams,
    cleanings: &[EventInterval],
    candidates: &[EventInterval],
    cfg: &DetectorConfig,
) -> Result<Detection> {
    cfg.validate()?;
    let model = fit_clean_model(series, scaler, cleanings, cfg)?;
    let reports = candidates
        .par_iter()
        .map(|ev| score_event_bcse(&model, series, ev, cfg))
        .collect();
    classify_by_quantile(reports, cfg.q)
}

/// Marks valid reports Detected when their score is strictly above the
/// `q`-quantile of all valid scores, Rejected otherwise.
pub fn classify_by_quantile(mut reports: Vec<EventScoreReport>, q: f64) -> Result<Detection> {
    reports.sort_by_key(|r| (r.event.start, r.event.end));
    let scores: Vec<f64> = reports.iter().filter(|r| r.is_valid()).filter_map(|r| r.score).collect();
    if scores.is_empty() {
        return Err(Error::NoValidCandidates);
    }
    let threshold = quantile(&scores, q)?;
    for r in reports.iter_mut().filter(|r| r.is_valid()) {
        let (status, reason) = if r.score.unwrap() > threshold {
            (EventStatus::Detected, Reason::Detected)
        } else {
            (EventStatus::Rejected, Reason::BelowQuantile)
        };
        r.status = status;
        r.reason = Some(reason);
        r.event.status = status;
    }
    Ok(Detection { reports, threshold })
}

/// The quantile level at which exactly `k` of `n` distinct scores exceed
/// the linear-interpolation quantile.
pub fn quantile_level_for_top(n: usize, k: usize) -> Option<f64> {
    if n < 2 || k == 0 || k >= n {
        return None;
    }
    Some((n as f64 - k as f64 - 0.5) / (n as f64 - 1.0))
}
