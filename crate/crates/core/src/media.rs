//! Frames, detections, ground truth and predictions, plus their on-disk formats.
//!
//! Formats:
//! - frames are binary PGM (`P5`, maxval 255);
//! - a video is a directory holding `meta.json` and `frame_NNNNNN.pgm` files;
//! - detections are JSON Lines, one `{"frame","class","score","bbox"}` object per line;
//! - ground truth is CSV `video_id,start_seconds,end_seconds`, predictions add `confidence`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";

/// Single 8-bit grayscale image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidParam(format!(
                "frame {width}x{height} needs {expected} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = value;
    }
}

/// Axis-aligned box in pixel coordinates; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidBBox(format!(
                "box ({x},{y},{w},{h}) has zero extent"
            )));
        }
        if x.checked_add(w).is_none() || y.checked_add(h).is_none() {
            return Err(Error::InvalidBBox(format!("box ({x},{y},{w},{h}) overflows")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn centroid(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            (x1 - x0) as u64 * (y1 - y0) as u64
        }
    }

    /// Clips a signed rectangle to `[0,width) x [0,height)`; `None` when nothing is left.
    pub fn clipped(x: i64, y: i64, w: i64, h: i64, width: u32, height: u32) -> Option<BBox> {
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = (x + w).min(width as i64);
        let y1 = (y + h).min(height as i64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BBox {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0) as u32,
            h: (y1 - y0) as u32,
        })
    }
}

/// One detected object on one frame (or on a background image).
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_index: usize,
    pub class_label: String,
    pub score: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(frame_index: usize, class_label: impl Into<String>, score: f64, bbox: BBox) -> Result<Self> {
        check_score(score)?;
        Ok(Self {
            frame_index,
            class_label: class_label.into(),
            score,
            bbox,
        })
    }
}

fn check_score(score: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::parse(format!("score {score} outside [0,1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
}

impl GroundTruthEntry {
    pub fn new(video_id: impl Into<String>, start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() || start < 0.0 || end <= start {
            return Err(Error::InvalidInterval { start, end });
        }
        Ok(Self {
            video_id: video_id.into(),
            start,
            end,
        })
    }
}

/// A confirmed stalled-vehicle event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub bbox: BBox,
    pub confidence: f64,
}

/// A row of the predictions CSV: an event without its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub confidence: f64,
}

impl From<&AnomalyEvent> for Prediction {
    fn from(e: &AnomalyEvent) -> Self {
        Self {
            video_id: e.video_id.clone(),
            start: e.start,
            end: e.end,
            confidence: e.confidence,
        }
    }
}

// ---------------------------------------------------------------------------
// PGM

pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", frame.width, frame.height);
    let mut out = Vec::with_capacity(header.len() + frame.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&frame.pixels);
    out
}

/// Parses a binary PGM. Comments (`#` to end of line) are allowed in the header.
pub fn decode_pgm(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::parse("bad PGM magic, expected P5"));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // header fields must be separated by whitespace
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            return Err(Error::parse(format!("malformed PGM header near field {i}")));
        }
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::parse("truncated PGM header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos || pos - start > 10 {
            return Err(Error::parse(format!("malformed PGM header field {i}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::parse(format!("malformed PGM header field {i}")))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::parse("missing whitespace after PGM maxval")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PGM maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 || width > u32::MAX as u64 || height > u32::MAX as u64 {
        return Err(Error::parse(format!("invalid PGM dimensions {width}x{height}")));
    }
    let n = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| Error::parse("PGM dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(Error::parse(format!(
            "truncated PGM raster: {} of {n} bytes",
            raster.len()
        )));
    }
    Frame::new(width as u32, height as u32, raster[..n].to_vec())
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(frame)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Frame sequences

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub video_id: String,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
}

#[derive(Debug, Clone)]
enum FrameSource {
    Dir(PathBuf),
    Memory(Arc<Vec<Frame>>),
}

/// Lazily loaded, read-only video. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    meta: SequenceMeta,
    source: FrameSource,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

fn parse_frame_file_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn open_sequence(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    if !meta_path.is_file() {
        return Err(Error::MissingMetadata(meta_path));
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SequenceMeta = serde_json::from_str(&text)
        .map_err(|e| Error::parse(format!("{}: {e}", meta_path.display())))?;
    if !(meta.fps.is_finite() && meta.fps > 0.0) {
        return Err(Error::parse(format!("fps must be positive, got {}", meta.fps)));
    }

    let mut present = BTreeSet::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(i) = entry.file_name().to_str().and_then(parse_frame_file_name) {
            present.insert(i);
        }
    }
    let last = present.iter().next_back().map_or(0, |&i| i + 1);
    let needed = last.max(meta.frame_count);
    if let Some(missing) = (0..needed).find(|i| !present.contains(i)) {
        return Err(Error::SequenceGap { missing });
    }
    Ok(FrameSequence {
        meta,
        source: FrameSource::Dir(dir.to_path_buf()),
    })
}

pub fn write_sequence_meta(dir: impl AsRef<Path>, meta: &SequenceMeta) -> Result<()> {
    let path = dir.as_ref().join(META_FILE);
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

impl FrameSequence {
    /// Wraps frames already in memory.
    pub fn from_frames(video_id: impl Into<String>, fps: f64, frames: Vec<Frame>) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidParam(format!("fps must be positive, got {fps}")));
        }
        let (width, height) = frames.first().map_or((0, 0), Frame::dims);
        if let Some(f) = frames.iter().find(|f| f.dims() != (width, height)) {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: f.dims(),
            });
        }
        Ok(Self {
            meta: SequenceMeta {
                video_id: video_id.into(),
                fps,
                width,
                height,
                frame_count: frames.len(),
            },
            source: FrameSource::Memory(Arc::new(frames)),
        })
    }

    pub fn meta(&self) -> &SequenceMeta {
        &self.meta
    }

    pub fn video_id(&self) -> &str {
        &self.meta.video_id
    }

    pub fn fps(&self) -> f64 {
        self.meta.fps
    }

    pub fn width(&self) -> u32 {
        self.meta.width
    }

    pub fn height(&self) -> u32 {
        self.meta.height
    }

    pub fn len(&self) -> usize {
        self.meta.frame_count
    }

    pub fn is_empty(&self) -> bool {
        self.meta.frame_count == 0
    }

    pub fn duration(&self) -> f64 {
        self.meta.frame_count as f64 / self.meta.fps
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        index as f64 / self.meta.fps
    }

    pub fn dir(&self) -> Option<&Path> {
        match &self.source {
            FrameSource::Dir(d) => Some(d),
            FrameSource::Memory(_) => None,
        }
    }

    pub fn frame_path(&self, index: usize) -> Option<PathBuf> {
        self.dir().map(|d| d.join(frame_file_name(index)))
    }

    pub fn frame(&self, index: usize) -> Result<Frame> {
        if index >= self.meta.frame_count {
            return Err(Error::InvalidParam(format!(
                "frame {index} out of range for {} frames",
                self.meta.frame_count
            )));
        }
        let frame = match &self.source {
            FrameSource::Dir(d) => read_frame(d.join(frame_file_name(index)))?,
            FrameSource::Memory(frames) => frames[index].clone(),
        };
        let expected = (self.meta.width, self.meta.height);
        if frame.dims() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: frame.dims(),
            });
        }
        Ok(frame)
    }
}

// ---------------------------------------------------------------------------
// Detections (JSON Lines)

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    frame: u64,
    class: String,
    score: f64,
    bbox: [i64; 4],
}

pub(crate) fn bbox_from_xywh(xywh: [i64; 4]) -> Result<BBox> {
    let [x, y, w, h] = xywh;
    if x < 0 || y < 0 || w <= 0 || h <= 0 {
        return Err(Error::InvalidBBox(format!("[{x},{y},{w},{h}]")));
    }
    if [x, y, w, h].iter().any(|&v| v > u32::MAX as i64) {
        return Err(Error::InvalidBBox(format!("[{x},{y},{w},{h}] out of range")));
    }
    BBox::new(x as u32, y as u32, w as u32, h as u32)
}

pub fn parse_detection_line(line: &str, line_no: usize) -> Result<Detection> {
    let rec: DetectionRecord =
        serde_json::from_str(line).map_err(|e| Error::parse_at(line_no, e.to_string()))?;
    if !(0.0..=1.0).contains(&rec.score) {
        return Err(Error::parse_at(line_no, format!("score {} outside [0,1]", rec.score)));
    }
    let bbox = bbox_from_xywh(rec.bbox)?;
    Ok(Detection {
        frame_index: rec.frame as usize,
        class_label: rec.class,
        score: rec.score,
        bbox,
    })
}

pub fn format_detection_line(d: &Detection) -> String {
    let rec = DetectionRecord {
        frame: d.frame_index as u64,
        class: d.class_label.clone(),
        score: d.score,
        bbox: [d.bbox.x as i64, d.bbox.y as i64, d.bbox.w as i64, d.bbox.h as i64],
    };
    serde_json::to_string(&rec).expect("detection serializes")
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_detection_line(l, i + 1))
        .collect()
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_detection_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn write_detections(detections: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in detections {
        writeln!(w, "{}", format_detection_line(d)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Ground truth and predictions (CSV)

const GT_HEADER: [&str; 3] = ["video_id", "start_seconds", "end_seconds"];
const PRED_HEADER: [&str; 4] = ["video_id", "start_seconds", "end_seconds", "confidence"];

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse_at(line, format!("{what} {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse_at(line, format!("{what} {field:?} is not finite")));
    }
    Ok(v)
}

fn read_csv_rows(text: &str, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader.headers().map_err(csv_error)?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::parse_at(1, format!("expected header {:?}, found {:?}", header.join(","), found)));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok(rows)
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthEntry>> {
    read_csv_rows(text, &GT_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            let start = parse_f64(&rec[1], "start_seconds", line)?;
            let end = parse_f64(&rec[2], "end_seconds", line)?;
            GroundTruthEntry::new(&rec[0], start, end)
        })
        .collect()
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ground_truth(&text)
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ground_truth(entries: &[GroundTruthEntry], path: impl AsRef<Path>) -> Result<()> {
    write_csv(
        path.as_ref(),
        &GT_HEADER,
        entries
            .iter()
            .map(|e| vec![e.video_id.clone(), e.start.to_string(), e.end.to_string()]),
    )
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    read_csv_rows(text, &PRED_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            let start = parse_f64(&rec[1], "start_seconds", line)?;
            let end = parse_f64(&rec[2], "end_seconds", line)?;
            let confidence = parse_f64(&rec[3], "confidence", line)?;
            if start < 0.0 || end <= start {
                return Err(Error::InvalidInterval { start, end });
            }
            if !(0.0..=1.0).contains(&confidence) {
                return Err(Error::parse_at(line, format!("confidence {confidence} outside [0,1]")));
            }
            Ok(Prediction {
                video_id: rec[0].to_string(),
                start,
                end,
                confidence,
            })
        })
        .collect()
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}

pub fn write_predictions(preds: &[Prediction], path: impl AsRef<Path>) -> Result<()> {
    write_csv(
        path.as_ref(),
        &PRED_HEADER,
        preds.iter().map(|p| {
            vec![
                p.video_id.clone(),
                p.start.to_string(),
                p.end.to_string(),
                p.confidence.to_string(),
            ]
        }),
    )
}
