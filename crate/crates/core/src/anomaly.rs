//! Anomaly candidates from background detections and the decision tree that
//! confirms them against foreground detections.
//!
//! A vehicle the detector finds on a background image did not get erased by
//! the median, so it stood still for most of that window. Candidates off the
//! road mask, with a low score or a small box are dropped. The rest are
//! confirmed when foreground detections keep overlapping the candidate box;
//! the first and last overlapping frames give the event's start and end.

use std::collections::BTreeSet;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::background::{background_stream, BackgroundFrame, BackgroundParams};
use crate::detector::{DetectorHandle, ImageRef};
use crate::error::Result;
use crate::mask::{adaptive_road_mask, bbox_on_road, mask_union, Mask, MaskParams};
use crate::media::{write_frame, AnomalyEvent, BBox, Detection, FrameSequence};
use crate::sorter::VideoCategory;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bbox: BBox,
    pub score: f64,
    /// Start of the first background window showing the vehicle, seconds.
    pub first_seen: f64,
    /// End of the last background window showing the vehicle, seconds.
    pub last_seen: f64,
    pub windows_seen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDetections {
    pub window_start: f64,
    pub window_end: f64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportProfile {
    pub supporting_frames: Vec<usize>,
}

impl SupportProfile {
    /// Contiguous runs `(first, last)` of supporting frames.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &f in &self.supporting_frames {
            match runs.last_mut() {
                Some((_, last)) if *last + 1 == f => *last = f,
                _ => runs.push((f, f)),
            }
        }
        runs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionParams {
    pub score_min: f64,
    /// Fraction of the frame area.
    pub area_min: f64,
    pub iou_support: f64,
    pub iou_merge: f64,
    /// `None` means one second's worth of frames.
    pub min_support_frames: Option<usize>,
    pub min_support_density: f64,
    pub min_windows: usize,
}

impl Default for DecisionParams {
    fn default() -> Self {
        Self {
            score_min: 0.5,
            area_min: 0.001,
            iou_support: 0.3,
            iou_merge: 0.5,
            min_support_frames: None,
            min_support_density: 0.3,
            min_windows: 2,
        }
    }
}

impl DecisionParams {
    pub fn support_frames_needed(&self, fps: f64) -> usize {
        self.min_support_frames.unwrap_or_else(|| fps.round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, name: &str| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(crate::Error::InvalidParam(format!("{name} = {v} outside [0,1]")))
            }
        };
        unit(self.score_min, "score_min")?;
        unit(self.area_min, "area_min")?;
        unit(self.iou_support, "iou_support")?;
        unit(self.iou_merge, "iou_merge")?;
        unit(self.min_support_density, "min_support_density")?;
        if self.min_support_frames == Some(0) {
            return Err(crate::Error::InvalidParam("min_support_frames must be >= 1".into()));
        }
        Ok(())
    }
}

fn passes_gates(score: f64, bbox: &BBox, params: &DecisionParams, frame_area: u64) -> bool {
    score >= params.score_min && bbox.area() as f64 >= params.area_min * frame_area as f64
}

/// Keeps background detections that clear the score and area gates and lie on the road.
pub fn extract_candidates(
    windows: &[WindowDetections],
    mask: &Mask,
    params: &DecisionParams,
    frame_area: u64,
    min_overlap: f64,
) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for w in windows {
        for d in &w.detections {
            if passes_gates(d.score, &d.bbox, params, frame_area) && bbox_on_road(&d.bbox, mask, min_overlap)? {
                out.push(Candidate {
                    bbox: d.bbox,
                    score: d.score,
                    first_seen: w.window_start,
                    last_seen: w.window_end,
                    windows_seen: 1,
                });
            }
        }
    }
    Ok(out)
}

/// Greedy clustering in `first_seen` order against each cluster's
/// representative box (the box of its highest-scoring member).
pub fn merge_candidates(cands: &[Candidate], iou_merge: f64) -> Vec<Candidate> {
    let mut order: Vec<&Candidate> = cands.iter().collect();
    order.sort_by(|a, b| {
        a.first_seen
            .total_cmp(&b.first_seen)
            .then_with(|| b.score.total_cmp(&a.score))
            .then_with(|| a.bbox.cmp(&b.bbox))
    });
    let mut clusters: Vec<(Candidate, BTreeSet<u64>)> = Vec::new();
    for c in order {
        let window_key = c.first_seen.to_bits();
        match clusters.iter_mut().find(|(rep, _)| iou(&rep.bbox, &c.bbox) >= iou_merge) {
            Some((rep, windows)) => {
                if c.score > rep.score {
                    rep.score = c.score;
                    rep.bbox = c.bbox;
                }
                rep.first_seen = rep.first_seen.min(c.first_seen);
                rep.last_seen = rep.last_seen.max(c.last_seen);
                windows.insert(window_key);
                rep.windows_seen = windows.len().max(rep.windows_seen);
            }
            None => {
                let windows = BTreeSet::from([window_key]);
                clusters.push((c.clone(), windows));
            }
        }
    }
    clusters.into_iter().map(|(c, _)| c).collect()
}

pub fn support_profile(cand: &Candidate, foreground: &[Detection], iou_support: f64) -> SupportProfile {
    let frames: BTreeSet<usize> = foreground
        .iter()
        .filter(|d| iou(&cand.bbox, &d.bbox) >= iou_support)
        .map(|d| d.frame_index)
        .collect();
    SupportProfile {
        supporting_frames: frames.into_iter().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Rejection {
    LowScore,
    SmallArea,
    FewWindows { seen: usize, needed: usize },
    FewSupportFrames { found: usize, needed: usize },
    SparseSupport { density: f64 },
    ZeroLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Accepted(AnomalyEvent),
    Rejected(Rejection),
}

impl Decision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Decision::Accepted(_))
    }
}

/// Share of the candidate's observed frames (the background windows it was
/// seen in) that have foreground support.
pub fn support_density(cand: &Candidate, profile: &SupportProfile, fps: f64) -> f64 {
    let lo = (cand.first_seen * fps).round() as usize;
    let hi = ((cand.last_seen * fps).round() as usize).max(lo + 1);
    let inside = profile
        .supporting_frames
        .iter()
        .filter(|&&f| f >= lo && f < hi)
        .count();
    inside as f64 / (hi - lo) as f64
}

pub fn decide(
    video_id: &str,
    cand: &Candidate,
    profile: &SupportProfile,
    params: &DecisionParams,
    fps: f64,
) -> Decision {
    if cand.windows_seen < params.min_windows {
        return Decision::Rejected(Rejection::FewWindows {
            seen: cand.windows_seen,
            needed: params.min_windows,
        });
    }
    let needed = params.support_frames_needed(fps);
    let found = profile.supporting_frames.len();
    if found < needed {
        return Decision::Rejected(Rejection::FewSupportFrames { found, needed });
    }
    let density = support_density(cand, profile, fps);
    if density < params.min_support_density {
        return Decision::Rejected(Rejection::SparseSupport { density });
    }
    let (first, last) = match (profile.supporting_frames.first(), profile.supporting_frames.last()) {
        (Some(&f), Some(&l)) if l > f => (f, l),
        _ => return Decision::Rejected(Rejection::ZeroLength),
    };
    Decision::Accepted(AnomalyEvent {
        video_id: video_id.to_string(),
        start: first as f64 / fps,
        end: last as f64 / fps,
        bbox: cand.bbox,
        confidence: cand.score,
    })
}

/// One pass of the decision tree for a candidate: score and area gates, then
/// foreground support, then the frequency decision.
pub fn evaluate_candidate(
    video_id: &str,
    cand: &Candidate,
    foreground: &[Detection],
    params: &DecisionParams,
    fps: f64,
    frame_area: u64,
) -> (SupportProfile, Decision) {
    if cand.score < params.score_min {
        return (SupportProfile { supporting_frames: vec![] }, Decision::Rejected(Rejection::LowScore));
    }
    if (cand.bbox.area() as f64) < params.area_min * frame_area as f64 {
        return (SupportProfile { supporting_frames: vec![] }, Decision::Rejected(Rejection::SmallArea));
    }
    let profile = support_profile(cand, foreground, params.iou_support);
    let decision = decide(video_id, cand, &profile, params, fps);
    (profile, decision)
}

/// Merges events that overlap in time and whose boxes overlap by at least `iou_merge`.
pub fn coalesce_events(mut events: Vec<AnomalyEvent>, iou_merge: f64) -> Vec<AnomalyEvent> {
    events.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.bbox.cmp(&b.bbox)));
    loop {
        let mut merged = false;
        'outer: for i in 0..events.len() {
            for j in i + 1..events.len() {
                let (a, b) = (&events[i], &events[j]);
                if a.start <= b.end && b.start <= a.end && iou(&a.bbox, &b.bbox) >= iou_merge {
                    let b = events.remove(j);
                    let a = &mut events[i];
                    a.start = a.start.min(b.start);
                    a.end = a.end.max(b.end);
                    if b.confidence > a.confidence {
                        a.confidence = b.confidence;
                        a.bbox = b.bbox;
                    }
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    events.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.bbox.cmp(&b.bbox)));
    events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySettings {
    pub background: BackgroundParams,
    pub block: u32,
    pub min_overlap: f64,
    pub decision: DecisionParams,
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateReport {
    pub candidate: Candidate,
    pub decision: Decision,
    pub support_runs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct VideoAnalysis {
    pub masks: Vec<Mask>,
    pub road_mask: Mask,
    pub window_detections: Vec<WindowDetections>,
    pub candidates: Vec<CandidateReport>,
    pub events: Vec<AnomalyEvent>,
}

/// Everything after background estimation: per-window detection, road mask,
/// candidates, decisions and event coalescing. `bg_paths[i]` must hold
/// `backgrounds[i]` for detectors that read files.
#[allow(clippy::too_many_arguments)]
pub fn analyze_backgrounds(
    seq: &FrameSequence,
    category: &VideoCategory,
    backgrounds: &[BackgroundFrame],
    bg_paths: &[std::path::PathBuf],
    foreground: &[Detection],
    detector: &mut DetectorHandle,
    settings: &AnomalySettings,
) -> Result<VideoAnalysis> {
    let mask_params = MaskParams {
        k1: category.k1,
        k2: category.k2,
        block: settings.block,
    };
    let masks = backgrounds
        .iter()
        .map(|bg| adaptive_road_mask(&bg.frame, mask_params))
        .collect::<Result<Vec<_>>>()?;
    let road_mask = mask_union(&masks)?;

    let mut window_detections = Vec::with_capacity(backgrounds.len());
    for (bg, path) in backgrounds.iter().zip(bg_paths) {
        let image = ImageRef {
            path,
            width: bg.frame.width(),
            height: bg.frame.height(),
            source_frames: &bg.sampled_indices,
        };
        match detector.detect(&image) {
            Ok(detections) => window_detections.push(WindowDetections {
                window_start: bg.window_start,
                window_end: bg.window_end,
                detections,
            }),
            Err(e) => warn!(
                "{}: detector failed on window at {} s, skipping: {e}",
                seq.video_id(),
                bg.window_start
            ),
        }
    }

    let frame_area = seq.width() as u64 * seq.height() as u64;
    let mut decision = settings.decision.clone();
    // a video with fewer windows than required can still confirm a stall seen in all of them
    decision.min_windows = decision.min_windows.min(backgrounds.len()).max(1);

    let raw = extract_candidates(&window_detections, &road_mask, &decision, frame_area, settings.min_overlap)?;
    let merged = merge_candidates(&raw, decision.iou_merge);
    let mut reports = Vec::with_capacity(merged.len());
    let mut accepted = Vec::new();
    for cand in merged {
        let (profile, d) = evaluate_candidate(seq.video_id(), &cand, foreground, &decision, seq.fps(), frame_area);
        if let Decision::Accepted(e) = &d {
            accepted.push(e.clone());
        }
        reports.push(CandidateReport {
            candidate: cand,
            decision: d,
            support_runs: profile.runs(),
        });
    }
    Ok(VideoAnalysis {
        masks,
        road_mask,
        window_detections,
        candidates: reports,
        events: coalesce_events(accepted, decision.iou_merge),
    })
}

/// Full per-video flow. Backgrounds are written to `bg_dir` as `bg_<ms>.pgm`
/// so file-based detectors can read them.
pub fn detect_anomalies(
    seq: &FrameSequence,
    category: &VideoCategory,
    foreground: &[Detection],
    detector: &mut DetectorHandle,
    settings: &AnomalySettings,
    bg_dir: &Path,
) -> Result<(Vec<BackgroundFrame>, VideoAnalysis)> {
    let backgrounds = background_stream(seq, category, settings.background)?;
    std::fs::create_dir_all(bg_dir).map_err(|e| crate::Error::io(bg_dir, e))?;
    let mut paths = Vec::with_capacity(backgrounds.len());
    for bg in &backgrounds {
        let p = bg_dir.join(bg.file_name());
        write_frame(&bg.frame, &p)?;
        paths.push(p);
    }
    let analysis = analyze_backgrounds(seq, category, &backgrounds, &paths, foreground, detector, settings)?;
    Ok((backgrounds, analysis))
}
