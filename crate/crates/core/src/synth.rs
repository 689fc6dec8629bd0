//! Deterministic synthetic traffic videos with oracle detections and ground truth.
//!
//! Roads are dark lane strips separated by bright dividers on a bright
//! off-road surface; vehicles are dark rectangles driving along lanes, some of
//! them stopping for a while. Every frame gets Gaussian sensor noise.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::media::{
    self, frame_file_name, write_frame, write_sequence_meta, BBox, Detection, Frame, FrameSequence,
    GroundTruthEntry, SequenceMeta,
};
use crate::sorter::LightingClass;

pub const SCENE_FILE: &str = "scene.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const GROUND_TRUTH_FILE: &str = "gt.csv";

/// Nominal intensities for a lighting condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub road: u8,
    pub offroad: u8,
    pub vehicle: u8,
}

impl Palette {
    pub fn for_lighting(lighting: LightingClass) -> Self {
        match lighting {
            LightingClass::Day => Palette { road: 60, offroad: 160, vehicle: 25 },
            LightingClass::Night => Palette { road: 10, offroad: 40, vehicle: 0 },
            LightingClass::Snow => Palette { road: 100, offroad: 240, vehicle: 45 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// A straight lane crossing the whole frame. `direction` is +1 (towards larger
/// coordinates) or -1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub axis: Axis,
    pub center: u32,
    pub width: u32,
    pub direction: i8,
}

impl Lane {
    fn band(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let lo = self.center.saturating_sub(self.width / 2);
        match self.axis {
            Axis::Horizontal => (0, lo, width, self.width),
            Axis::Vertical => (lo, 0, self.width, height),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub lane: usize,
    /// Extent along the lane.
    pub length: u32,
    /// Extent across the lane.
    pub breadth: u32,
    /// Pixels per second.
    pub speed: f64,
    pub spawn: f64,
    #[serde(default)]
    pub stall: Option<(f64, f64)>,
    #[serde(default = "default_class")]
    pub class: String,
}

fn default_class() -> String {
    "car".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub video_id: String,
    pub duration: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub lighting: LightingClass,
    pub palette: Palette,
    pub road_texture_sigma: f64,
    pub noise_sigma: f64,
    pub lanes: Vec<Lane>,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub offroad_parked: Vec<BBox>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.fps > 0.0 && self.fps.is_finite()) || !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("fps {} and duration {} must be positive", self.fps, self.duration));
        }
        if self.width == 0 || self.height == 0 {
            return bad("frame has zero size".into());
        }
        if self.noise_sigma < 0.0 || self.road_texture_sigma < 0.0 {
            return bad("noise levels must be non-negative".into());
        }
        match self.lighting {
            LightingClass::Night if self.palette.offroad > 50 || self.palette.road > 50 => {
                return bad("night palette must stay at or below 50".into())
            }
            LightingClass::Snow if self.palette.offroad < 200 => {
                return bad("snow palette needs off-road at or above 200".into())
            }
            _ => {}
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            let (x, y, w, h) = lane.band(self.width, self.height);
            if lane.width == 0 || x + w > self.width || y + h > self.height {
                return bad(format!("lane {i} does not fit in the frame"));
            }
            if lane.direction != 1 && lane.direction != -1 {
                return bad(format!("lane {i} direction must be +1 or -1"));
            }
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            let Some(lane) = self.lanes.get(v.lane) else {
                return bad(format!("vehicle {i} references missing lane {}", v.lane));
            };
            let (along, across) = match lane.axis {
                Axis::Horizontal => (self.width, self.height),
                Axis::Vertical => (self.height, self.width),
            };
            if v.length == 0 || v.breadth == 0 || v.length > along || v.breadth > across || v.breadth > lane.width {
                return bad(format!("vehicle {i} is larger than its lane or the frame"));
            }
            if !(v.speed > 0.0 && v.speed.is_finite()) {
                return bad(format!("vehicle {i} speed must be positive"));
            }
            if let Some((s, e)) = v.stall {
                if !(s >= v.spawn && e > s && e <= self.duration) {
                    return bad(format!("vehicle {i} stall ({s}, {e}) outside its lifetime or the video"));
                }
                // the stop position must be fully inside the frame
                let pos = self.along_position(v, lane, s);
                if pos < 0 || pos + v.length as i64 > along as i64 {
                    return bad(format!("vehicle {i} stalls outside the frame"));
                }
            }
        }
        for b in &self.offroad_parked {
            if !b.fits(self.width, self.height) {
                return bad(format!("parked box {b:?} outside the frame"));
            }
        }
        Ok(())
    }

    fn along_position(&self, v: &VehicleSpec, lane: &Lane, t: f64) -> i64 {
        let travelled_time = match v.stall {
            Some((s, _)) if t < s => t - v.spawn,
            Some((s, e)) if t <= e => s - v.spawn,
            Some((s, e)) => t - v.spawn - (e - s),
            None => t - v.spawn,
        };
        let travelled = (v.speed * travelled_time).floor() as i64;
        let along = match lane.axis {
            Axis::Horizontal => self.width,
            Axis::Vertical => self.height,
        } as i64;
        if lane.direction > 0 {
            -(v.length as i64) + travelled
        } else {
            along - travelled
        }
    }

    /// Visible (clipped) box of a vehicle at time `t`.
    pub fn vehicle_box(&self, index: usize, t: f64) -> Option<BBox> {
        let v = &self.vehicles[index];
        if t < v.spawn {
            return None;
        }
        let lane = &self.lanes[v.lane];
        let pos = self.along_position(v, lane, t);
        let across = lane.center as i64 - v.breadth as i64 / 2;
        match lane.axis {
            Axis::Horizontal => BBox::clipped(pos, across, v.length as i64, v.breadth as i64, self.width, self.height),
            Axis::Vertical => BBox::clipped(across, pos, v.breadth as i64, v.length as i64, self.width, self.height),
        }
    }

    /// Every object visible on frame `index`, parked ones included.
    pub fn objects_at(&self, index: usize) -> Vec<(String, BBox)> {
        let t = index as f64 / self.fps;
        let mut out: Vec<(String, BBox)> = self
            .offroad_parked
            .iter()
            .map(|b| ("car".to_string(), *b))
            .collect();
        for (i, v) in self.vehicles.iter().enumerate() {
            if let Some(b) = self.vehicle_box(i, t) {
                out.push((v.class.clone(), b));
            }
        }
        out
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthEntry> {
        self.vehicles
            .iter()
            .filter_map(|v| v.stall)
            .map(|(s, e)| GroundTruthEntry::new(&self.video_id, s, e).expect("validated stall"))
            .collect()
    }

    pub fn meta(&self) -> SequenceMeta {
        SequenceMeta {
            video_id: self.video_id.clone(),
            fps: self.fps,
            width: self.width,
            height: self.height,
            frame_count: self.frame_count(),
        }
    }

    /// Road pixels of the empty scene (lanes only).
    pub fn road_truth(&self) -> Mask {
        let mut bits = vec![0u8; self.width as usize * self.height as usize];
        for lane in &self.lanes {
            let (x, y, w, h) = lane.band(self.width, self.height);
            for yy in y..y + h {
                let row = yy as usize * self.width as usize;
                bits[row + x as usize..row + (x + w) as usize].fill(1);
            }
        }
        Mask::new(self.width, self.height, bits).expect("consistent mask")
    }

    /// Static scene: off-road, textured lanes and parked vehicles, no noise.
    pub fn base_image(&self) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x7465_7874_7572_6500);
        let mut frame = Frame::filled(self.width, self.height, self.palette.offroad);
        let texture = Normal::new(0.0, self.road_texture_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let road = self.road_truth();
        for (p, &is_road) in frame.pixels_mut().iter_mut().zip(road.bits()) {
            if is_road == 1 {
                let v = self.palette.road as f64 + texture.sample(&mut rng);
                *p = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        for b in &self.offroad_parked {
            paint(&mut frame, b, self.palette.vehicle);
        }
        frame
    }
}

fn paint(frame: &mut Frame, b: &BBox, value: u8) {
    for y in b.y..b.bottom() {
        for x in b.x..b.right() {
            frame.set(x, y, value);
        }
    }
}

/// Renders frames one at a time. Noise comes from a fixed Gaussian pool read
/// at a random offset per frame, which keeps rendering cheap.
pub struct Renderer<'a> {
    spec: &'a SceneSpec,
    base: Frame,
    pool: Vec<i16>,
    offsets: Vec<usize>,
}

const POOL_SLACK: usize = 1 << 16;

impl<'a> Renderer<'a> {
    pub fn new(spec: &'a SceneSpec) -> Result<Self> {
        spec.validate()?;
        let base = spec.base_image();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = base.pixels().len() + POOL_SLACK;
        let pool = if spec.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
            (0..n).map(|_| normal.sample(&mut rng).round() as i16).collect()
        } else {
            vec![0; n]
        };
        let offsets = (0..spec.frame_count()).map(|_| rng.random_range(0..POOL_SLACK)).collect();
        Ok(Self {
            spec,
            base,
            pool,
            offsets,
        })
    }

    pub fn render(&self, index: usize) -> Frame {
        let mut frame = self.base.clone();
        for (_, b) in self.spec.objects_at(index) {
            paint(&mut frame, &b, self.spec.palette.vehicle);
        }
        let noise = &self.pool[self.offsets[index]..];
        for (p, &n) in frame.pixels_mut().iter_mut().zip(noise) {
            *p = (*p as i16 + n).clamp(0, 255) as u8;
        }
        frame
    }
}

/// Oracle per-frame detections: every visible object with score 1.
pub fn oracle_detections(spec: &SceneSpec) -> Vec<Detection> {
    (0..spec.frame_count())
        .flat_map(|i| {
            spec.objects_at(i).into_iter().map(move |(class, b)| Detection {
                frame_index: i,
                class_label: class,
                score: 1.0,
                bbox: b,
            })
        })
        .collect()
}

#[derive(Debug)]
pub struct GeneratedVideo {
    pub sequence: FrameSequence,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthEntry>,
}

/// Writes frames, `meta.json`, `scene.json` and `detections.jsonl` into `dir`.
pub fn generate(spec: &SceneSpec, dir: impl AsRef<Path>) -> Result<GeneratedVideo> {
    let dir = dir.as_ref();
    let renderer = Renderer::new(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..spec.frame_count() {
        write_frame(&renderer.render(i), dir.join(frame_file_name(i)))?;
    }
    write_sequence_meta(dir, &spec.meta())?;
    let scene_path = dir.join(SCENE_FILE);
    let text = serde_json::to_string_pretty(spec).expect("scene serializes");
    fs::write(&scene_path, text + "\n").map_err(|e| Error::io(&scene_path, e))?;
    let detections = oracle_detections(spec);
    media::write_detections(&detections, dir.join(DETECTIONS_FILE))?;
    Ok(GeneratedVideo {
        sequence: media::open_sequence(dir)?,
        detections,
        ground_truth: spec.ground_truth(),
    })
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SceneSpec =
        serde_json::from_str(&text).map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Presets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Freeway,
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    Stall,
    Clear,
    Parked,
}

/// Size and timing shared by every scene in a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusFormat {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub duration: f64,
}

impl Default for CorpusFormat {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            fps: 10.0,
            duration: 300.0,
        }
    }
}

const LANE_WIDTH: u32 = 12;
const VEHICLE_LENGTH: u32 = 14;
const VEHICLE_BREADTH: u32 = 10;

/// Lanes of a layout. Index 0..n-1 carry traffic; the last lane is a shoulder
/// that only the stalling vehicle uses.
pub fn layout_lanes(layout: Layout, format: &CorpusFormat) -> Vec<Lane> {
    let mid_y = format.height / 2;
    let mid_x = format.width / 2;
    let h = |center: u32, direction: i8| Lane {
        axis: Axis::Horizontal,
        center,
        width: LANE_WIDTH,
        direction,
    };
    let v = |center: u32, direction: i8| Lane {
        axis: Axis::Vertical,
        center,
        width: LANE_WIDTH,
        direction,
    };
    match layout {
        Layout::Freeway => vec![h(mid_y - 24, -1), h(mid_y - 4, 1), h(mid_y + 16, 1)],
        Layout::Intersection => vec![
            h(mid_y - 24, -1),
            h(mid_y - 4, 1),
            v(mid_x - 10, 1),
            v(mid_x + 10, -1),
            h(mid_y + 16, 1),
        ],
    }
}

/// Builds one preset scene. Traffic timing is drawn from `seed`.
pub fn preset_scene(
    video_id: &str,
    lighting: LightingClass,
    layout: Layout,
    scenario: Scenario,
    format: &CorpusFormat,
    seed: u64,
) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lanes = layout_lanes(layout, format);
    let shoulder = lanes.len() - 1;
    let mut vehicles = Vec::new();
    for (li, lane) in lanes.iter().enumerate().take(shoulder) {
        let along = match lane.axis {
            Axis::Horizontal => format.width,
            Axis::Vertical => format.height,
        } as f64;
        let mut t = rng.random_range(0.0..4.0);
        while t < format.duration {
            let speed = rng.random_range(30.0..50.0);
            // skip vehicles that would still be on screen at the end
            if t + (along + VEHICLE_LENGTH as f64) / speed < format.duration {
                vehicles.push(VehicleSpec {
                    lane: li,
                    length: VEHICLE_LENGTH,
                    breadth: VEHICLE_BREADTH,
                    speed,
                    spawn: t,
                    stall: None,
                    class: if rng.random_bool(0.2) { "truck".into() } else { "car".into() },
                });
            }
            t += rng.random_range(3.0..7.0);
        }
    }
    let mut offroad_parked = Vec::new();
    match scenario {
        Scenario::Stall => {
            // long enough to dominate a 300 s background window
            let start = (format.duration * rng.random_range(0.15..0.25)).round();
            let end = (format.duration * rng.random_range(0.88..0.95)).round();
            let stop_at = format.width as f64 * 0.2;
            let speed = 40.0;
            let spawn = start - (stop_at + VEHICLE_LENGTH as f64) / speed;
            vehicles.push(VehicleSpec {
                lane: shoulder,
                length: VEHICLE_LENGTH,
                breadth: VEHICLE_BREADTH,
                speed,
                spawn,
                stall: Some((start, end)),
                class: "car".into(),
            });
        }
        Scenario::Clear => {}
        Scenario::Parked => {
            // below the lowest lane, with a gap, even on short frames
            let lane_bottom = lanes
                .iter()
                .filter(|l| l.axis == Axis::Horizontal)
                .map(|l| l.center + l.width / 2)
                .max()
                .unwrap_or(0);
            let y = format.height.saturating_sub(40).max(lane_bottom + 8);
            offroad_parked.push(BBox::new(30, y, VEHICLE_LENGTH, VEHICLE_BREADTH).expect("non-empty"));
            offroad_parked.push(BBox::new(format.width - 60, y, VEHICLE_LENGTH, VEHICLE_BREADTH).expect("non-empty"));
        }
    }
    SceneSpec {
        video_id: video_id.into(),
        duration: format.duration,
        fps: format.fps,
        width: format.width,
        height: format.height,
        lighting,
        palette: Palette::for_lighting(lighting),
        road_texture_sigma: match lighting {
            LightingClass::Night => 2.0,
            _ => 5.0,
        },
        noise_sigma: match lighting {
            LightingClass::Night => 3.0,
            _ => 4.0,
        },
        lanes,
        vehicles,
        offroad_parked,
        seed,
    }
}

/// The 12-video acceptance mix of lighting, layout and scenario.
pub fn standard_presets() -> Vec<(LightingClass, Layout, Scenario)> {
    use LightingClass::*;
    use Layout::*;
    use Scenario::*;
    vec![
        (Day, Freeway, Stall),
        (Day, Freeway, Clear),
        (Day, Freeway, Parked),
        (Day, Intersection, Stall),
        (Day, Intersection, Parked),
        (Night, Freeway, Stall),
        (Night, Freeway, Clear),
        (Night, Intersection, Parked),
        (Snow, Freeway, Stall),
        (Snow, Freeway, Parked),
        (Snow, Intersection, Stall),
        (Snow, Intersection, Clear),
    ]
}

pub fn preset_video_id(index: usize, lighting: LightingClass, layout: Layout, scenario: Scenario) -> String {
    format!(
        "v{index:02}_{}_{}_{}",
        lighting.as_str().to_lowercase(),
        format!("{layout:?}").to_lowercase(),
        format!("{scenario:?}").to_lowercase()
    )
}

pub fn corpus_specs(
    presets: &[(LightingClass, Layout, Scenario)],
    format: &CorpusFormat,
    seed: u64,
) -> Vec<SceneSpec> {
    presets
        .iter()
        .enumerate()
        .map(|(i, &(lighting, layout, scenario))| {
            let id = preset_video_id(i, lighting, layout, scenario);
            let scene_seed = crate::background::window_seed(seed, &id, 0);
            preset_scene(&id, lighting, layout, scenario, format, scene_seed)
        })
        .collect()
}

/// Generates one subdirectory per preset plus a corpus-level `gt.csv`.
pub fn corpus(
    presets: &[(LightingClass, Layout, Scenario)],
    format: &CorpusFormat,
    seed: u64,
    out: impl AsRef<Path>,
) -> Result<Vec<SceneSpec>> {
    if presets.is_empty() {
        return Err(Error::InvalidSpec("corpus needs at least one preset".into()));
    }
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let specs = corpus_specs(presets, format, seed);
    let mut gt = Vec::new();
    for spec in &specs {
        let video = generate(spec, out.join(&spec.video_id))?;
        gt.extend(video.ground_truth);
    }
    media::write_ground_truth(&gt, out.join(GROUND_TRUTH_FILE))?;
    Ok(specs)
}

/// A single horizontal road band on a bright surround, used to calibrate the
/// thresholding constants. Returns the noiseless image and its road truth.
pub fn road_band_scene(
    width: u32,
    height: u32,
    band_rows: u32,
    road: u8,
    texture_sigma: f64,
    offroad: u8,
    seed: u64,
) -> (Frame, Mask) {
    let spec = SceneSpec {
        video_id: "calibration".into(),
        duration: 1.0,
        fps: 1.0,
        width,
        height,
        lighting: LightingClass::Day,
        palette: Palette { road, offroad, vehicle: 0 },
        road_texture_sigma: texture_sigma,
        noise_sigma: 0.0,
        lanes: vec![Lane {
            axis: Axis::Horizontal,
            center: height / 2,
            width: band_rows,
            direction: 1,
        }],
        vehicles: vec![],
        offroad_parked: vec![],
        seed,
    };
    (spec.base_image(), spec.road_truth())
}
