//! Background estimation: per-pixel median of a random subset of each window's frames.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::media::{Frame, FrameSequence};
use crate::sorter::VideoCategory;

/// Fraction of a nominal window a trailing partial window needs to stand alone.
pub const PARTIAL_WINDOW_FLOOR: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundFrame {
    pub frame: Frame,
    pub window_start: f64,
    pub window_end: f64,
    pub sampled_indices: Vec<usize>,
}

impl BackgroundFrame {
    pub fn window_start_ms(&self) -> u64 {
        (self.window_start * 1000.0).round() as u64
    }

    pub fn file_name(&self) -> String {
        format!("bg_{}.pgm", self.window_start_ms())
    }
}

/// Seed for one window, derived from the run seed, the video and the window start.
pub fn window_seed(global_seed: u64, video_id: &str, window_start_ms: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update((video_id.len() as u64).to_le_bytes());
    h.update(video_id.as_bytes());
    h.update(window_start_ms.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Number of frames drawn from a window of `len` frames.
pub fn sample_size(len: usize, fraction: f64) -> usize {
    // tolerance keeps 0.1 * 900 at 90 rather than 91
    let k = (fraction * len as f64 - 1e-9).ceil() as usize;
    k.clamp(1, len)
}

/// Uniform sample without replacement, sorted ascending.
pub fn sample_indices(window: Range<usize>, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if window.is_empty() {
        return Err(Error::EmptyInput("sampling window has no frames"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParam(format!("sample fraction {fraction} outside (0,1]")));
    }
    let len = window.len();
    let k = sample_size(len, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, len, k)
        .into_iter()
        .map(|i| window.start + i)
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Per-pixel median. For an even count the lower-middle value is taken, so every
/// output pixel is a value observed at that location.
pub fn median_frame(frames: &[Frame]) -> Result<Frame> {
    let first = frames.first().ok_or(Error::EmptyInput("median of zero frames"))?;
    let dims = first.dims();
    if let Some(f) = frames.iter().find(|f| f.dims() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            found: f.dims(),
        });
    }
    let n = frames.len();
    let mid = (n - 1) / 2;
    let width = dims.0 as usize;
    let mut out = vec![0u8; first.pixels().len()];
    if width == 0 {
        return Frame::new(dims.0, dims.1, out);
    }
    out.par_chunks_mut(width).enumerate().for_each(|(row, chunk)| {
        let mut column = vec![0u8; n];
        let base = row * width;
        for (x, o) in chunk.iter_mut().enumerate() {
            for (c, f) in column.iter_mut().zip(frames) {
                *c = f.pixels()[base + x];
            }
            *o = *column.select_nth_unstable(mid).1;
        }
    });
    Frame::new(dims.0, dims.1, out)
}

/// Splits `frame_count` frames into consecutive windows of `window_frames`.
/// A trailing remainder shorter than 10% of a window joins the previous one.
pub fn plan_windows(frame_count: usize, window_frames: usize) -> Vec<Range<usize>> {
    let window_frames = window_frames.max(1);
    let full = frame_count / window_frames;
    let rem = frame_count % window_frames;
    let mut windows: Vec<Range<usize>> = (0..full)
        .map(|i| i * window_frames..(i + 1) * window_frames)
        .collect();
    if rem > 0 {
        let start = full * window_frames;
        match windows.last_mut() {
            Some(last) if (rem as f64) < PARTIAL_WINDOW_FLOOR * window_frames as f64 => last.end = frame_count,
            _ => windows.push(start..frame_count),
        }
    }
    windows
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundParams {
    pub fraction: f64,
    pub seed: u64,
}

pub fn background_stream(
    seq: &FrameSequence,
    category: &VideoCategory,
    params: BackgroundParams,
) -> Result<Vec<BackgroundFrame>> {
    if seq.duration() < 1.0 {
        return Err(Error::VideoTooShort {
            duration_s: seq.duration(),
        });
    }
    if !(category.background_window > 0.0) {
        return Err(Error::InvalidParam(format!(
            "background window {} s must be positive",
            category.background_window
        )));
    }
    let window_frames = (category.background_window * seq.fps()).round().max(1.0) as usize;
    plan_windows(seq.len(), window_frames)
        .into_iter()
        .map(|window| {
            let window_start = seq.timestamp(window.start);
            let window_end = seq.timestamp(window.end);
            let start_ms = (window_start * 1000.0).round() as u64;
            let seed = window_seed(params.seed, seq.video_id(), start_ms);
            let sampled_indices = sample_indices(window, params.fraction, seed)?;
            let frames = sampled_indices
                .iter()
                .map(|&i| seq.frame(i))
                .collect::<Result<Vec<_>>>()?;
            Ok(BackgroundFrame {
                frame: median_frame(&frames)?,
                window_start,
                window_end,
                sampled_indices,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sorter::{LightingClass, RoadType, SortParams};

    fn px(values: &[u8]) -> Vec<Frame> {
        values.iter().map(|&v| Frame::filled(1, 1, v)).collect()
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median_frame(&px(&[10, 10, 200])).unwrap().pixels(), &[10]);
        assert_eq!(median_frame(&px(&[10, 200])).unwrap().pixels(), &[10]);
        assert_eq!(median_frame(&px(&[200, 10])).unwrap().pixels(), &[10]);
    }

    #[test]
    fn median_removes_transient() {
        // 9 frames of a passing vehicle (255) over road (40): sorted, index 10 of 21 is 40
        let mut values = vec![255u8; 9];
        values.extend(vec![40u8; 12]);
        assert_eq!(median_frame(&px(&values)).unwrap().pixels(), &[40]);
    }

    #[test]
    fn median_errors() {
        assert!(matches!(median_frame(&[]), Err(Error::EmptyInput(_))));
        let mixed = vec![Frame::filled(2, 2, 0), Frame::filled(2, 3, 0)];
        assert!(matches!(median_frame(&mixed), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sampling() {
        let s = sample_indices(0..900, 0.10, 7).unwrap();
        assert_eq!(s.len(), 90);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|&i| i < 900));
        assert_eq!(s, sample_indices(0..900, 0.10, 7).unwrap());
        assert_ne!(s, sample_indices(0..900, 0.10, 8).unwrap());

        assert_eq!(sample_indices(41..42, 0.1, 3).unwrap(), vec![41]);
        assert!(matches!(sample_indices(5..5, 0.1, 3), Err(Error::EmptyInput(_))));
        assert!(sample_indices(0..10, 0.0, 3).is_err());
    }

    #[test]
    fn window_plans() {
        assert_eq!(plan_windows(9000, 300).len(), 30);
        // 5% remainder is merged into the last window
        let w = plan_windows(315, 300);
        assert_eq!(w, vec![0..315]);
        // 20% remainder stands alone
        let w = plan_windows(360, 300);
        assert_eq!(w, vec![0..300, 300..360]);
        // shorter than a window
        assert_eq!(plan_windows(50, 300), vec![0..50]);
    }

    fn category(lighting: LightingClass) -> VideoCategory {
        VideoCategory::new("v", lighting, RoadType::Freeway, &SortParams::default())
    }

    #[test]
    fn static_scene_background_equals_frame() {
        let frame = Frame::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let seq = FrameSequence::from_frames("v", 10.0, vec![frame.clone(); 300]).unwrap();
        let bgs = background_stream(&seq, &category(LightingClass::Day), BackgroundParams { fraction: 0.1, seed: 1 }).unwrap();
        assert_eq!(bgs.len(), 1);
        assert_eq!(bgs[0].frame, frame);
        assert_eq!(bgs[0].sampled_indices.len(), 30);
    }

    #[test]
    fn window_counts_by_category() {
        // 900 s at 1 fps keeps the test light
        let seq = FrameSequence::from_frames("v", 1.0, vec![Frame::filled(2, 2, 9); 900]).unwrap();
        let p = BackgroundParams { fraction: 0.1, seed: 1 };
        let day = background_stream(&seq, &category(LightingClass::Day), p).unwrap();
        assert_eq!(day.len(), 30);
        let starts: Vec<f64> = day.iter().map(|b| b.window_start).collect();
        assert_eq!(starts, (0..30).map(|i| i as f64 * 30.0).collect::<Vec<_>>());
        let night = background_stream(&seq, &category(LightingClass::Night), p).unwrap();
        assert_eq!(night.iter().map(|b| b.window_start).collect::<Vec<_>>(), vec![0.0, 300.0, 600.0]);
    }

    #[test]
    fn too_short() {
        let seq = FrameSequence::from_frames("v", 10.0, vec![Frame::filled(2, 2, 9); 5]).unwrap();
        let r = background_stream(&seq, &category(LightingClass::Day), BackgroundParams { fraction: 0.1, seed: 1 });
        assert!(matches!(r, Err(Error::VideoTooShort { .. })));
    }
}
