//! Video sorting: lighting class from the averaged intensity histogram and
//! road type from the number of distinct traffic directions.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{Detection, Frame, FrameSequence};

pub const NIGHT_PEAK_MAX: usize = 50;
pub const SNOW_BAND: (f64, f64) = (200.0, 250.0);
pub const SHORT_WINDOW_S: f64 = 30.0;
pub const LONG_WINDOW_S: f64 = 300.0;

/// Normalized 256-bin intensity histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    bins: [f64; 256],
}

impl Histogram {
    /// Builds a histogram from raw (non-negative) bin weights, normalizing to unit mass.
    pub fn from_weights(weights: &[f64; 256]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParam("histogram weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyInput("histogram has no mass"));
        }
        let mut bins = [0.0; 256];
        for (b, w) in bins.iter_mut().zip(weights) {
            *b = w / total;
        }
        Ok(Self { bins })
    }

    pub fn of_frame(frame: &Frame) -> Self {
        let mut counts = [0u64; 256];
        for &p in frame.pixels() {
            counts[p as usize] += 1;
        }
        let n = frame.pixels().len().max(1) as f64;
        let mut bins = [0.0; 256];
        for (b, c) in bins.iter_mut().zip(counts) {
            *b = c as f64 / n;
        }
        Self { bins }
    }

    pub fn bins(&self) -> &[f64; 256] {
        &self.bins
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }
}

/// Mean of per-frame normalized histograms over every `stride`-th frame.
pub fn average_histogram(seq: &FrameSequence, stride: usize) -> Result<Histogram> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("cannot histogram an empty sequence"));
    }
    if stride == 0 {
        return Err(Error::InvalidParam("histogram stride must be >= 1".into()));
    }
    let mut acc = [0.0f64; 256];
    let mut sampled = 0usize;
    for i in (0..seq.len()).step_by(stride) {
        let h = Histogram::of_frame(&seq.frame(i)?);
        for (a, b) in acc.iter_mut().zip(h.bins.iter()) {
            *a += b;
        }
        sampled += 1;
    }
    Histogram::from_weights(&acc.map(|v| v / sampled as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakParams {
    pub smooth_radius: usize,
    pub min_prominence: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            smooth_radius: 5,
            min_prominence: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub bin: usize,
    /// Smoothed histogram height at the peak.
    pub mass: f64,
    pub prominence: f64,
}

/// Moving average with a `2r+1` window, truncated at the ends of the range.
pub fn smooth(bins: &[f64; 256], radius: usize) -> [f64; 256] {
    let mut prefix = [0.0f64; 257];
    for i in 0..256 {
        prefix[i + 1] = prefix[i] + bins[i];
    }
    let mut out = [0.0; 256];
    for (i, o) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(255);
        *o = (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1) as f64;
    }
    out
}

/// Local maxima of the smoothed histogram with their topographic prominence.
///
/// Mass outside `[0,255]` is taken as zero, so a peak at the edge of the range
/// is measured against that floor. Plateaus report their middle bin.
pub fn find_peaks(hist: &Histogram, params: PeakParams) -> Vec<Peak> {
    let s = smooth(&hist.bins, params.smooth_radius);
    let at = |i: isize| -> f64 {
        if (0..256).contains(&i) {
            s[i as usize]
        } else {
            0.0
        }
    };
    let mut peaks = Vec::new();
    let mut i = 0isize;
    while i < 256 {
        let height = at(i);
        let mut j = i;
        while j + 1 < 256 && at(j + 1) == height {
            j += 1;
        }
        if height > 0.0 && at(i - 1) < height && at(j + 1) < height {
            let mut left_min = height;
            let mut k = i - 1;
            loop {
                let v = at(k);
                left_min = left_min.min(v);
                if k < 0 || v > height {
                    break;
                }
                k -= 1;
            }
            let mut right_min = height;
            let mut k = j + 1;
            loop {
                let v = at(k);
                right_min = right_min.min(v);
                if k > 255 || v > height {
                    break;
                }
                k += 1;
            }
            let prominence = height - left_min.max(right_min);
            if prominence >= params.min_prominence {
                peaks.push(Peak {
                    bin: ((i + j) / 2) as usize,
                    mass: height,
                    prominence,
                });
            }
        }
        i = j + 1;
    }
    peaks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LightingClass {
    Day,
    Night,
    Snow,
}

impl LightingClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LightingClass::Day => "Day",
            LightingClass::Night => "Night",
            LightingClass::Snow => "Snow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoadType {
    Freeway,
    Intersection,
}

/// Night: the dominant peak sits in `[0,50]`. Snow: at least two peaks whose
/// mass-weighted mean bin falls in `[200,250]`. Anything else is Day.
pub fn classify_lighting(hist: &Histogram, params: PeakParams) -> LightingClass {
    classify_peaks(&find_peaks(hist, params))
}

pub fn classify_peaks(peaks: &[Peak]) -> LightingClass {
    let Some(dominant) = peaks
        .iter()
        .copied()
        .reduce(|a, b| if b.mass > a.mass { b } else { a })
    else {
        return LightingClass::Day;
    };
    if dominant.bin <= NIGHT_PEAK_MAX {
        return LightingClass::Night;
    }
    if peaks.len() >= 2 {
        let mass: f64 = peaks.iter().map(|p| p.mass).sum();
        let mean = peaks.iter().map(|p| p.bin as f64 * p.mass).sum::<f64>() / mass;
        if (SNOW_BAND.0..=SNOW_BAND.1).contains(&mean) {
            return LightingClass::Snow;
        }
    }
    LightingClass::Day
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectionParams {
    /// Association gate as a fraction of frame width.
    pub gate_frac: f64,
    pub min_move_px: f64,
    pub support_fraction: f64,
}

impl Default for DirectionParams {
    fn default() -> Self {
        Self {
            gate_frac: 0.1,
            min_move_px: 2.0,
            support_fraction: 0.05,
        }
    }
}

/// Angle bin (of 8, centred on multiples of 45 degrees) for a displacement.
pub fn direction_bin(dx: f64, dy: f64) -> usize {
    let angle = dy.atan2(dx);
    ((angle / (PI / 4.0)).round() as i64).rem_euclid(8) as usize
}

/// Counts the bins holding at least `support_fraction` of the moving vectors.
pub fn count_direction_bins(vectors: &[(f64, f64)], min_move_px: f64, support_fraction: f64) -> usize {
    let mut bins = [0usize; 8];
    let mut total = 0usize;
    for &(dx, dy) in vectors {
        if dx.hypot(dy) >= min_move_px {
            bins[direction_bin(dx, dy)] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return 0;
    }
    bins.iter()
        .filter(|&&c| c as f64 >= support_fraction * total as f64)
        .count()
}

/// Per-frame displacement vectors from nearest-centroid association between
/// consecutive frames that hold detections. Pairs further apart than one second
/// are not associated.
pub fn displacement_vectors(detections: &[Detection], fps: f64, gate_px: f64) -> Result<Vec<(f64, f64)>> {
    let mut by_frame: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for d in detections {
        by_frame.entry(d.frame_index).or_default().push(d.bbox.centroid());
    }
    if by_frame.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "direction estimate needs detections on 2 frames, found {}",
            by_frame.len()
        )));
    }
    let max_gap = fps.max(1.0);
    let frames: Vec<_> = by_frame.into_iter().collect();
    let mut vectors = Vec::new();
    for pair in frames.windows(2) {
        let (f0, prev) = &pair[0];
        let (f1, cur) = &pair[1];
        let gap = (f1 - f0) as f64;
        if gap > max_gap {
            continue;
        }
        for &(cx, cy) in cur {
            let nearest = prev
                .iter()
                .map(|&(px, py)| (cx - px, cy - py))
                .min_by(|a, b| a.0.hypot(a.1).total_cmp(&b.0.hypot(b.1)));
            if let Some((dx, dy)) = nearest {
                if dx.hypot(dy) <= gate_px {
                    vectors.push((dx / gap, dy / gap));
                }
            }
        }
    }
    Ok(vectors)
}

pub fn estimate_directions(
    detections: &[Detection],
    fps: f64,
    frame_width: u32,
    params: DirectionParams,
) -> Result<usize> {
    let gate = params.gate_frac * frame_width as f64;
    let vectors = displacement_vectors(detections, fps, gate)?;
    Ok(count_direction_bins(&vectors, params.min_move_px, params.support_fraction))
}

pub fn classify_road_type(direction_count: usize) -> RoadType {
    if direction_count > 2 {
        RoadType::Intersection
    } else {
        RoadType::Freeway
    }
}

/// Thresholding constants for one lighting class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KPair {
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KTable {
    pub day: KPair,
    pub night: KPair,
    pub snow: KPair,
}

impl KTable {
    pub fn get(&self, lighting: LightingClass) -> KPair {
        match lighting {
            LightingClass::Day => self.day,
            LightingClass::Night => self.night,
            LightingClass::Snow => self.snow,
        }
    }
}

impl Default for KTable {
    /// Winners of the road-mask calibration grid: Day on the textured band
    /// scene, Night and Snow on their synthetic freeway scenes.
    fn default() -> Self {
        Self {
            day: KPair { k1: 2.0, k2: 0.5 },
            night: KPair { k1: 1.75, k2: 1.0 },
            snow: KPair { k1: 2.5, k2: 0.25 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SortParams {
    pub histogram_stride: usize,
    pub peaks: PeakParams,
    pub directions: DirectionParams,
    pub k_table: KTable,
    /// Replaces the 30 s / 300 s rule when set.
    pub background_window_override: Option<f64>,
}

impl Default for SortParams {
    fn default() -> Self {
        Self {
            histogram_stride: 10,
            peaks: PeakParams::default(),
            directions: DirectionParams::default(),
            k_table: KTable::default(),
            background_window_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoCategory {
    pub video_id: String,
    pub lighting: LightingClass,
    pub road_type: RoadType,
    #[serde(rename = "background_window_s")]
    pub background_window: f64,
    pub k1: f64,
    pub k2: f64,
}

impl VideoCategory {
    pub fn new(video_id: impl Into<String>, lighting: LightingClass, road_type: RoadType, params: &SortParams) -> Self {
        let background_window = params.background_window_override.unwrap_or(
            if lighting != LightingClass::Day || road_type == RoadType::Intersection {
                LONG_WINDOW_S
            } else {
                SHORT_WINDOW_S
            },
        );
        let k = params.k_table.get(lighting);
        Self {
            video_id: video_id.into(),
            lighting,
            road_type,
            background_window,
            k1: k.k1,
            k2: k.k2,
        }
    }
}

pub fn sort_video(seq: &FrameSequence, detections: &[Detection], params: &SortParams) -> Result<VideoCategory> {
    let hist = average_histogram(seq, params.histogram_stride)?;
    let lighting = classify_lighting(&hist, params.peaks);
    let directions = estimate_directions(detections, seq.fps(), seq.width(), params.directions)?;
    let road_type = classify_road_type(directions);
    Ok(VideoCategory::new(seq.video_id(), lighting, road_type, params))
}
