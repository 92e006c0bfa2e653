use std::path::PathBuf;

use crate::types::Timestamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("line {line}: malformed date `{text}`")]
    MalformedDate { line: usize, text: String },

    #[error("series has no valid rows")]
    EmptySeries,

    #[error("timestamps not strictly increasing at {at}")]
    NonMonotonicTimestamps { at: Timestamp },

    #[error("channel `{0}` is constant or non-finite; cannot scale")]
    DegenerateChannel(&'static str),

    #[error("interval end precedes start ({start} > {end})")]
    InvertedInterval { start: Timestamp, end: Timestamp },

    #[error("regularized normal equations are numerically singular")]
    SingularSystem,

    #[error("actual values are all zero over the window")]
    AllZeroActuals,

    #[error("window contains no points")]
    EmptyWindow,

    #[error("series have no timestamps in common")]
    NoOverlap,

    #[error("empty input")]
    EmptyInput,

    #[error("every candidate event is invalid")]
    NoValidCandidates,

    #[error("no manual cleanings supplied")]
    NoCleanings,

    #[error("{have} training records, need at least {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("all timestamps in segment are equal")]
    DegenerateSegment,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
