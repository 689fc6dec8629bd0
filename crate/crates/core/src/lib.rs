//! Stalled-vehicle detection for fixed traffic cameras.
//!
//! Frames go through per-window median backgrounds, an adaptive road mask and
//! an object detector; detections that persist on the background and are
//! backed by foreground detections become anomaly events. `scoring` rates
//! events against ground truth and `synth` builds test videos.

pub mod anomaly;
pub mod background;
pub mod config;
pub mod detector;
pub mod error;
pub mod mask;
pub mod media;
pub mod pipeline;
pub mod scoring;
pub mod sorter;
pub mod synth;

pub use anomaly::{iou, AnomalySettings, Candidate, DecisionParams};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use media::{AnomalyEvent, BBox, Detection, Frame, FrameSequence, GroundTruthEntry, Prediction};
pub use scoring::{ScoreReport, MatchResult};
pub use sorter::{LightingClass, RoadType, VideoCategory};
