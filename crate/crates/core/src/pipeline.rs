//! End-to-end runs: candidate extraction, detection, estimation and trends.

use crate::detectors::{detect_bcse, detect_fcse, Detection};
use crate::error::{Error, Result};
use crate::estimation::{
    build_training_set, estimate_soiling_ratio, segment_trends, Method, Provenance, SegmentTrend,
    SoilingRatioSeries,
};
use crate::ingestion::{extract_rains, fit_scaler};
use crate::types::{merge_events, DetectorConfig, EventInterval, Span, TelemetrySeries};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    pub detector: DetectorConfig,
    pub smooth_window: Span,
}

impl PipelineConfig {
    pub fn new(method: Method) -> Self {
        let detector = match method {
            Method::Bcse => DetectorConfig::bcse(),
            _ => DetectorConfig::fcse(),
        };
        PipelineConfig {
            method,
            detector,
            smooth_window: Span::days(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Merged cleaning and rain candidates; empty for the baseline.
    pub candidates: Vec<EventInterval>,
    pub detection: Option<Detection>,
    /// Events whose post-event stretches trained the final model.
    pub training_events: Vec<EventInterval>,
    pub sr: SoilingRatioSeries,
    pub trends: Vec<SegmentTrend>,
}

/// Candidate events: manual cleanings merged with rain episodes.
pub fn candidate_events(
    series: &TelemetrySeries,
    cleanings: &[EventInterval],
    cfg: &DetectorConfig,
) -> Vec<EventInterval> {
    merge_events(cleanings, &extract_rains(series, cfg.min_rain_peak))
}

/// Runs detection only.
pub fn run_detection(
    series: &TelemetrySeries,
    cleanings: &[EventInterval],
    method: Method,
    cfg: &DetectorConfig,
) -> Result<(Vec<EventInterval>, Detection)> {
    let scaler = fit_scaler(series)?;
    let candidates = candidate_events(series, cleanings, cfg);
    let detection = match method {
        Method::Fcse => detect_fcse(series, &scaler, &candidates, cfg)?,
        Method::Bcse => detect_bcse(series, &scaler, cleanings, &candidates, cfg)?,
        Method::Baseline => {
            return Err(Error::InvalidConfig("the baseline method has no detection step".into()))
        }
    };
    Ok((candidates, detection))
}

pub fn run_pipeline(
    series: &TelemetrySeries,
    cleanings: &[EventInterval],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let det = &cfg.detector;
    det.validate()?;
    if cfg.method != Method::Fcse && cleanings.is_empty() {
        return Err(Error::NoCleanings);
    }
    let scaler = fit_scaler(series)?;

    let (candidates, detection, training_events) = match cfg.method {
        Method::Baseline => (Vec::new(), None, cleanings.to_vec()),
        method => {
            let (candidates, detection) = run_detection(series, cleanings, method, det)?;
            let mut training = detection.detected();
            if method == Method::Bcse {
                // Manual cleanings are known clean points regardless of score.
                training = merge_events(cleanings, &training);
            }
            (candidates, Some(detection), training)
        }
    };

    let training = build_training_set(&training_events, det.w_train, series)?;
    let provenance = Provenance {
        method: cfg.method,
        config: det.clone(),
        training_intervals: training_events.clone(),
    };
    let sr = estimate_soiling_ratio(series, &scaler, &training, det, cfg.smooth_window, provenance)?;
    let trends = segment_trends(&sr, &training_events, det.seed);
    Ok(PipelineOutput {
        candidates,
        detection,
        training_events,
        sr,
        trends,
    })
}
