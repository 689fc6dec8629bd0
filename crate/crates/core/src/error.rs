use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("missing metadata: {0}")]
    MissingMetadata(PathBuf),

    #[error("frame sequence has a gap: frame {missing} is missing")]
    SequenceGap { missing: usize },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),

    #[error("invalid interval: end {end} is not after start {start}")]
    InvalidInterval { start: f64, end: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("video too short: {duration_s} s")]
    VideoTooShort { duration_s: f64 },

    #[error("detector did not answer within {timeout_s} s")]
    DetectorTimeout { timeout_s: f64 },

    #[error("detector protocol error: {0}")]
    Protocol(String),

    #[error("missing precomputed detections: {0}")]
    MissingDetections(PathBuf),

    #[error("duplicate ground truth for video {video_id} ({start}..{end})")]
    DuplicateGroundTruth { video_id: String, start: f64, end: f64 },

    #[error("score undefined: no predictions and no ground truth")]
    UndefinedScore,

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(message: impl Into<String>) -> Self {
        Error::Parse {
            line: None,
            message: message.into(),
        }
    }

    pub(crate) fn parse_at(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line: Some(line),
            message: message.into(),
        }
    }
}
