//! Object detector bridge.
//!
//! Three backends share one call: an external process speaking a line protocol,
//! per-image precomputed JSONL files, and an oracle that reads the synthetic
//! scene description.
//!
//! External protocol, one JSON object per line:
//!
//! ```text
//! child  -> {"ready": true}                        once, at startup
//! parent -> {"image": "/abs/path/bg_30000.pgm"}
//! child  -> {"detections": [{"class": "car", "score": 0.91, "bbox": [x, y, w, h]}, ...]}
//! ```

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{self, BBox, Detection};
use crate::synth::SceneSpec;

pub const DEFAULT_TIMEOUT_S: f64 = 30.0;

pub fn default_vehicle_classes() -> BTreeSet<String> {
    ["car", "truck", "bus"].into_iter().map(String::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectorKind {
    ExternalProcess,
    OracleSynthetic,
    PrecomputedFiles,
}

/// An image handed to the detector: its file, size, and the video frames it
/// was built from (one for a raw frame, the sampled set for a background).
#[derive(Debug, Clone, Copy)]
pub struct ImageRef<'a> {
    pub path: &'a Path,
    pub width: u32,
    pub height: u32,
    pub source_frames: &'a [usize],
}

impl ImageRef<'_> {
    fn frame_index(&self) -> usize {
        self.source_frames.first().copied().unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// External process

#[derive(Serialize)]
struct Request<'a> {
    image: &'a str,
}

#[derive(Deserialize)]
struct Response {
    detections: Vec<WireDetection>,
}

#[derive(Deserialize)]
struct WireDetection {
    class: String,
    score: f64,
    bbox: [i64; 4],
}

#[derive(Deserialize)]
struct Ready {
    ready: bool,
}

pub struct ExternalDetector {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    broken: bool,
}

impl ExternalDetector {
    /// Spawns `command[0]` with the remaining elements as arguments and waits
    /// for the `{"ready": true}` handshake.
    pub fn spawn(command: &[String], timeout_s: f64) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("external detector command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut det = Self {
            child,
            stdin,
            lines: rx,
            timeout: Duration::from_secs_f64(timeout_s),
            broken: false,
        };
        let line = det.next_line()?;
        match serde_json::from_str::<Ready>(&line) {
            Ok(Ready { ready: true }) => Ok(det),
            _ => {
                det.broken = true;
                Err(Error::Protocol(format!("expected {{\"ready\": true}} handshake, got {line:?}")))
            }
        }
    }

    fn next_line(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => {
                self.broken = true;
                Err(Error::Protocol(format!("reading detector output: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = true;
                let _ = self.child.kill();
                Err(Error::DetectorTimeout {
                    timeout_s: self.timeout.as_secs_f64(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                Err(Error::Protocol("detector closed its output".into()))
            }
        }
    }

    pub fn detect(&mut self, image: &ImageRef) -> Result<Vec<Detection>> {
        if self.broken {
            return Err(Error::Protocol("detector process is no longer usable".into()));
        }
        let path = image
            .path
            .to_str()
            .ok_or_else(|| Error::Protocol(format!("non UTF-8 path {}", image.path.display())))?;
        let mut request = serde_json::to_string(&Request { image: path }).expect("request serializes");
        request.push('\n');
        if let Err(e) = self.stdin.write_all(request.as_bytes()).and_then(|_| self.stdin.flush()) {
            self.broken = true;
            return Err(Error::Protocol(format!("writing to detector: {e}")));
        }
        let line = self.next_line()?;
        parse_response(&line, image)
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Parses one response line. Boxes are clipped to the image; empty boxes are dropped.
pub fn parse_response(line: &str, image: &ImageRef) -> Result<Vec<Detection>> {
    let resp: Response =
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("{e}: {line:?}")))?;
    let mut out = Vec::with_capacity(resp.detections.len());
    for d in resp.detections {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::Protocol(format!("score {} outside [0,1]", d.score)));
        }
        let [x, y, w, h] = d.bbox;
        if w <= 0 || h <= 0 {
            return Err(Error::Protocol(format!("box [{x},{y},{w},{h}] has non-positive size")));
        }
        if let Some(bbox) = BBox::clipped(x, y, w, h, image.width, image.height) {
            out.push(Detection {
                frame_index: image.frame_index(),
                class_label: d.class,
                score: d.score,
                bbox,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Precomputed files

pub fn precomputed_path(dir: &Path, image: &Path) -> PathBuf {
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    dir.join(format!("{stem}.det.jsonl"))
}

pub struct PrecomputedDetector {
    dir: PathBuf,
}

impl PrecomputedDetector {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn detect(&mut self, image: &ImageRef) -> Result<Vec<Detection>> {
        let path = precomputed_path(&self.dir, image.path);
        if !path.is_file() {
            return Err(Error::MissingDetections(path));
        }
        media::read_detections(path)
    }
}

// ---------------------------------------------------------------------------
// Oracle

/// Reports every scene object that sits at one fixed box in a strict majority
/// of the image's source frames. For a raw frame that is every visible object;
/// for a background it is what survives the median.
pub struct OracleDetector {
    scene: SceneSpec,
}

impl OracleDetector {
    pub fn new(scene: SceneSpec) -> Self {
        Self { scene }
    }

    pub fn detect(&mut self, image: &ImageRef) -> Result<Vec<Detection>> {
        let n = image.source_frames.len();
        if n == 0 {
            return Err(Error::EmptyInput("oracle needs the image's source frames"));
        }
        let mut counts: HashMap<(String, BBox), usize> = HashMap::new();
        for &f in image.source_frames {
            for obj in self.scene.objects_at(f) {
                *counts.entry(obj).or_default() += 1;
            }
        }
        let mut found: Vec<_> = counts
            .into_iter()
            .filter(|(_, c)| 2 * c > n)
            .map(|((class, bbox), _)| Detection {
                frame_index: image.frame_index(),
                class_label: class,
                score: 1.0,
                bbox,
            })
            .collect();
        found.sort_by(|a, b| a.bbox.cmp(&b.bbox).then_with(|| a.class_label.cmp(&b.class_label)));
        Ok(found)
    }
}

// ---------------------------------------------------------------------------
// Handle

pub enum Backend {
    External(ExternalDetector),
    Precomputed(PrecomputedDetector),
    Oracle(OracleDetector),
}

pub struct DetectorHandle {
    backend: Backend,
    classes: BTreeSet<String>,
}

impl DetectorHandle {
    pub fn new(backend: Backend, classes: BTreeSet<String>) -> Self {
        Self { backend, classes }
    }

    pub fn kind(&self) -> DetectorKind {
        match self.backend {
            Backend::External(_) => DetectorKind::ExternalProcess,
            Backend::Precomputed(_) => DetectorKind::PrecomputedFiles,
            Backend::Oracle(_) => DetectorKind::OracleSynthetic,
        }
    }

    /// Detections on one image, restricted to the configured vehicle classes.
    pub fn detect(&mut self, image: &ImageRef) -> Result<Vec<Detection>> {
        let raw = match &mut self.backend {
            Backend::External(d) => d.detect(image)?,
            Backend::Precomputed(d) => d.detect(image)?,
            Backend::Oracle(d) => d.detect(image)?,
        };
        Ok(raw
            .into_iter()
            .filter(|d| self.classes.contains(&d.class_label))
            .collect())
    }
}
