//! Soiling-ratio estimation for PV systems from power, irradiance, module
//! temperature and precipitation telemetry.
//!
//! A polynomial ridge model of clean-module power is trained on stretches
//! of data right after cleaning events. The soiling ratio is actual power
//! over predicted clean power. Cleaning events come from a maintenance log
//! (baseline), or are detected among rain and cleaning candidates by
//! scoring the power recovery around each one (`fcse` fits a local model
//! before every candidate, `bcse` fits one model after known cleanings).

pub mod detectors;
pub mod error;
pub mod estimation;
pub mod ingestion;
pub mod kv;
pub mod metrics;
pub mod output;
pub mod pipeline;
pub mod regression;
pub mod synthgen;
pub mod types;

pub use detectors::{Detection, EventScoreReport, Reason};
pub use error::{Error, Result};
pub use estimation::{Method, SegmentTrend, SoilingRatioSeries};
pub use ingestion::{ParseOptions, PrecipMode, ScalerParams};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
pub use regression::RidgeModel;
pub use types::{
    DetectorConfig, EventInterval, EventKind, EventStatus, Span, TelemetryRecord, TelemetrySeries, Timestamp,
};
