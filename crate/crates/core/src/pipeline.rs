//! Stage functions and the corpus-level `run_all` driver.
//!
//! Input layout: a corpus directory holds one subdirectory per video (frames,
//! `meta.json`, foreground `detections.jsonl`, and for synthetic videos
//! `scene.json`) plus an optional `gt.csv`. Output mirrors it:
//!
//! ```text
//! out/<video_id>/category.json
//! out/<video_id>/backgrounds/bg_<ms>.pgm + index.json
//! out/<video_id>/events.json
//! out/<video_id>/predictions.csv
//! out/predictions.csv, out/score.json, out/manifest.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::{analyze_backgrounds, CandidateReport, VideoAnalysis};
use crate::background::{background_stream, BackgroundFrame};
use crate::config::{hex, DetectorChoice, PipelineConfig};
use crate::detector::{Backend, DetectorHandle, ExternalDetector, OracleDetector, PrecomputedDetector};
use crate::error::{Error, Result};
use crate::mask::{adaptive_road_mask, mask_union, MaskParams};
use crate::media::{
    self, open_sequence, read_frame, write_frame, AnomalyEvent, Detection, FrameSequence, Prediction, META_FILE,
};
use crate::scoring::{score, ScoreReport};
use crate::sorter::{sort_video, LightingClass, RoadType, VideoCategory};
use crate::synth::{read_scene, DETECTIONS_FILE, GROUND_TRUTH_FILE, SCENE_FILE};

pub const CATEGORY_FILE: &str = "category.json";
pub const BACKGROUND_DIR: &str = "backgrounds";
pub const BACKGROUND_INDEX: &str = "index.json";
pub const EVENTS_FILE: &str = "events.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SCORE_FILE: &str = "score.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ROAD_MASK_FILE: &str = "road_mask.pgm";

/// Video directories under `input`: `input` itself when it holds `meta.json`,
/// else its subdirectories that do, sorted by name.
pub fn discover_videos(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Err(Error::io(input, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    if input.join(META_FILE).is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(input).map_err(|e| Error::io(input, e))? {
        let path = entry.map_err(|e| Error::io(input, e))?.path();
        if path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::MissingMetadata(input.join(META_FILE)));
    }
    Ok(dirs)
}

/// Frames plus foreground detections of one video.
pub struct VideoInput {
    pub dir: PathBuf,
    pub sequence: FrameSequence,
    pub foreground: Vec<Detection>,
}

pub fn load_video(dir: &Path) -> Result<VideoInput> {
    let sequence = open_sequence(dir)?;
    let det_path = dir.join(DETECTIONS_FILE);
    if !det_path.is_file() {
        return Err(Error::MissingDetections(det_path));
    }
    let foreground = media::read_detections(&det_path)?;
    if let Some(d) = foreground.iter().find(|d| d.frame_index >= sequence.len()) {
        return Err(Error::parse(format!(
            "{}: detection frame {} beyond {} frames",
            det_path.display(),
            d.frame_index,
            sequence.len()
        )));
    }
    Ok(VideoInput {
        dir: dir.to_path_buf(),
        sequence,
        foreground,
    })
}

pub fn make_detector(cfg: &PipelineConfig, video: &VideoInput, bg_dir: &Path) -> Result<DetectorHandle> {
    let d = &cfg.detector;
    let backend = match d.kind {
        DetectorChoice::Oracle => Backend::Oracle(OracleDetector::new(read_scene(video.dir.join(SCENE_FILE))?)),
        DetectorChoice::External => Backend::External(ExternalDetector::spawn(&d.command, d.timeout_s)?),
        DetectorChoice::Precomputed => {
            let dir = match &d.dir {
                Some(root) => root.join(video.sequence.video_id()),
                None => bg_dir.to_path_buf(),
            };
            Backend::Precomputed(PrecomputedDetector::new(dir))
        }
    };
    Ok(DetectorHandle::new(backend, d.classes.clone()))
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// sort

/// Classifies the video. A video with no usable motion is treated as a freeway.
pub fn categorize(video: &VideoInput, cfg: &PipelineConfig) -> Result<VideoCategory> {
    match sort_video(&video.sequence, &video.foreground, &cfg.sort) {
        Err(Error::InsufficientData(why)) => {
            warn!("{}: {why}; assuming freeway", video.sequence.video_id());
            let hist = crate::sorter::average_histogram(&video.sequence, cfg.sort.histogram_stride)?;
            let lighting: LightingClass = crate::sorter::classify_lighting(&hist, cfg.sort.peaks);
            Ok(VideoCategory::new(video.sequence.video_id(), lighting, RoadType::Freeway, &cfg.sort))
        }
        other => other,
    }
}

pub fn stage_sort(video: &VideoInput, cfg: &PipelineConfig, out_dir: &Path) -> Result<VideoCategory> {
    let category = categorize(video, cfg)?;
    create_dir(out_dir)?;
    write_json(&category, &out_dir.join(CATEGORY_FILE))?;
    Ok(category)
}

pub fn load_category(out_dir: &Path) -> Result<VideoCategory> {
    read_json(&out_dir.join(CATEGORY_FILE))
}

// ---------------------------------------------------------------------------
// background

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundEntry {
    pub file: String,
    pub window_start: f64,
    pub window_end: f64,
    pub sampled_indices: Vec<usize>,
}

pub fn stage_background(
    video: &VideoInput,
    category: &VideoCategory,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<Vec<BackgroundFrame>> {
    let backgrounds = background_stream(&video.sequence, category, cfg.anomaly_settings().background)?;
    let bg_dir = out_dir.join(BACKGROUND_DIR);
    create_dir(&bg_dir)?;
    let mut index = Vec::with_capacity(backgrounds.len());
    for bg in &backgrounds {
        write_frame(&bg.frame, bg_dir.join(bg.file_name()))?;
        index.push(BackgroundEntry {
            file: bg.file_name(),
            window_start: bg.window_start,
            window_end: bg.window_end,
            sampled_indices: bg.sampled_indices.clone(),
        });
    }
    write_json(&index, &bg_dir.join(BACKGROUND_INDEX))?;
    Ok(backgrounds)
}

pub fn load_backgrounds(out_dir: &Path) -> Result<Vec<BackgroundFrame>> {
    let bg_dir = out_dir.join(BACKGROUND_DIR);
    let index: Vec<BackgroundEntry> = read_json(&bg_dir.join(BACKGROUND_INDEX))?;
    index
        .into_iter()
        .map(|e| {
            Ok(BackgroundFrame {
                frame: read_frame(bg_dir.join(&e.file))?,
                window_start: e.window_start,
                window_end: e.window_end,
                sampled_indices: e.sampled_indices,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// mask

/// Writes one mask per background plus their union (`road_mask.pgm`) into `mask_dir`.
pub fn stage_mask(
    backgrounds: &[BackgroundFrame],
    category: &VideoCategory,
    cfg: &PipelineConfig,
    mask_dir: &Path,
) -> Result<()> {
    let params = MaskParams {
        k1: category.k1,
        k2: category.k2,
        block: cfg.mask_block,
    };
    create_dir(mask_dir)?;
    let masks = backgrounds
        .iter()
        .map(|bg| adaptive_road_mask(&bg.frame, params))
        .collect::<Result<Vec<_>>>()?;
    for (bg, m) in backgrounds.iter().zip(&masks) {
        write_frame(&m.to_frame(), mask_dir.join(format!("mask_{}.pgm", bg.window_start_ms())))?;
    }
    write_frame(&mask_union(&masks)?.to_frame(), mask_dir.join(ROAD_MASK_FILE))
}

// ---------------------------------------------------------------------------
// detect

#[derive(Debug, Clone, Serialize)]
pub struct EventsFile<'a> {
    pub video_id: &'a str,
    pub category: &'a VideoCategory,
    pub events: &'a [AnomalyEvent],
    pub candidates: &'a [CandidateReport],
}

pub fn stage_detect(
    video: &VideoInput,
    category: &VideoCategory,
    backgrounds: &[BackgroundFrame],
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<VideoAnalysis> {
    let bg_dir = out_dir.join(BACKGROUND_DIR);
    let paths: Vec<PathBuf> = backgrounds.iter().map(|b| bg_dir.join(b.file_name())).collect();
    if let Some(p) = paths.iter().find(|p| !p.is_file()) {
        return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let mut detector = make_detector(cfg, video, &bg_dir)?;
    let analysis = analyze_backgrounds(
        &video.sequence,
        category,
        backgrounds,
        &paths,
        &video.foreground,
        &mut detector,
        &cfg.anomaly_settings(),
    )?;
    write_json(
        &EventsFile {
            video_id: video.sequence.video_id(),
            category,
            events: &analysis.events,
            candidates: &analysis.candidates,
        },
        &out_dir.join(EVENTS_FILE),
    )?;
    let preds: Vec<Prediction> = analysis.events.iter().map(Prediction::from).collect();
    media::write_predictions(&preds, out_dir.join(PREDICTIONS_FILE))?;
    Ok(analysis)
}

// ---------------------------------------------------------------------------
// score

pub fn stage_score(pred_path: &Path, gt_path: &Path, cfg: &PipelineConfig) -> Result<ScoreReport> {
    let preds = media::read_predictions(pred_path)?;
    let gts = media::read_ground_truth(gt_path)?;
    score(&preds, &gts, cfg.match_window_s)
}

pub fn write_score(report: &ScoreReport, path: &Path) -> Result<()> {
    write_json(report, path)
}

// ---------------------------------------------------------------------------
// run-all

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub sort_s: f64,
    pub background_s: f64,
    pub detect_s: f64,
    pub score_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VideoSummary {
    pub video_id: String,
    pub lighting: LightingClass,
    pub road_type: RoadType,
    pub windows: usize,
    pub candidates: usize,
    pub events: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool_version: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub input_hash: String,
    pub videos: Vec<VideoSummary>,
    pub timings: StageTimings,
    pub score: Option<ScoreReport>,
}

pub struct RunOutput {
    pub predictions: Vec<Prediction>,
    pub score: Option<ScoreReport>,
    pub manifest: Manifest,
}

/// SHA-256 over every regular file under `root`, visited in sorted path order,
/// each contributing its relative path and contents.
pub fn hash_tree(root: &Path) -> Result<String> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
            .collect::<Result<Vec<_>>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.is_file() {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(&f).to_string_lossy().into_owned();
        let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

struct VideoResult {
    summary: VideoSummary,
    events: Vec<AnomalyEvent>,
    sort_s: f64,
    background_s: f64,
    detect_s: f64,
}

fn run_video(dir: &Path, cfg: &PipelineConfig, out: &Path, mask_out: Option<&Path>) -> Result<VideoResult> {
    let video = load_video(dir)?;
    let out_dir = out.join(video.sequence.video_id());
    let t = Instant::now();
    let category = stage_sort(&video, cfg, &out_dir)?;
    let sort_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let backgrounds = stage_background(&video, &category, cfg, &out_dir)?;
    let background_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    if let Some(m) = mask_out {
        stage_mask(&backgrounds, &category, cfg, &m.join(video.sequence.video_id()))?;
    }
    let analysis = stage_detect(&video, &category, &backgrounds, cfg, &out_dir)?;
    let detect_s = t.elapsed().as_secs_f64();
    info!(
        "{}: {:?}/{:?}, {} windows, {} events",
        category.video_id,
        category.lighting,
        category.road_type,
        backgrounds.len(),
        analysis.events.len()
    );
    Ok(VideoResult {
        summary: VideoSummary {
            video_id: category.video_id.clone(),
            lighting: category.lighting,
            road_type: category.road_type,
            windows: backgrounds.len(),
            candidates: analysis.candidates.len(),
            events: analysis.events.len(),
        },
        events: analysis.events,
        sort_s,
        background_s,
        detect_s,
    })
}

/// Sort order for corpus-level predictions.
pub fn sort_predictions(preds: &mut [Prediction]) {
    preds.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.start.total_cmp(&b.start))
            .then(a.end.total_cmp(&b.end))
            .then(a.confidence.total_cmp(&b.confidence))
    });
}

/// Every stage over every video of `input`, then scoring when `gt.csv` is present.
pub fn run_all(input: &Path, out: &Path, cfg: &PipelineConfig, mask_out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let videos = discover_videos(input)?;
    create_dir(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<VideoResult> = pool.install(|| {
        videos
            .par_iter()
            .map(|dir| run_video(dir, cfg, out, mask_out))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut timings = StageTimings::default();
    let mut predictions = Vec::new();
    let mut summaries = Vec::new();
    for r in results {
        timings.sort_s += r.sort_s;
        timings.background_s += r.background_s;
        timings.detect_s += r.detect_s;
        predictions.extend(r.events.iter().map(Prediction::from));
        summaries.push(r.summary);
    }
    sort_predictions(&mut predictions);
    let pred_path = out.join(PREDICTIONS_FILE);
    media::write_predictions(&predictions, &pred_path)?;

    let gt_path = input.join(GROUND_TRUTH_FILE);
    let t = Instant::now();
    let score = if gt_path.is_file() {
        let report = stage_score(&pred_path, &gt_path, cfg)?;
        write_score(&report, &out.join(SCORE_FILE))?;
        Some(report)
    } else {
        None
    };
    timings.score_s = t.elapsed().as_secs_f64();
    timings.total_s = started.elapsed().as_secs_f64();

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        input_hash: hash_tree(input)?,
        videos: summaries,
        timings,
        score: score.clone(),
    };
    write_json(&manifest, &out.join(MANIFEST_FILE))?;
    Ok(RunOutput {
        predictions,
        score,
        manifest,
    })
}
