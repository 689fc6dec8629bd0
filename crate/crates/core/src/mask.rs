//! Road masks from adaptive thresholding of background images.
//!
//! A pixel with value `T` and local statistics `(mu, sigma)` is road when
//!
//! ```text
//! (mu - k1*sigma) / k2  <=  T  <=  (mu + k1*sigma) / (k1 + k2)
//! ```
//!
//! Subtracting the two bounds gives `T <= 2*sigma` for every positive `k1, k2`:
//! only pixels darker than twice their neighborhood deviation can be road, so
//! road shows up where a dark surface sits in a high-contrast neighborhood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{BBox, Frame};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidParam(format!(
                "mask {width}x{height} needs {} bits, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParam("mask bits must be 0 or 1".into()));
        }
        Ok(Self { width, height, bits })
    }

    pub fn filled(width: u32, height: u32, road: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![road as u8; width as usize * height as usize],
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize] == 1
    }

    pub fn road_pixels(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// 0 = off-road, 255 = road.
    pub fn to_frame(&self) -> Frame {
        Frame::new(self.width, self.height, self.bits.iter().map(|&b| b * 255).collect())
            .expect("mask dimensions are consistent")
    }

    /// Inverse of [`Mask::to_frame`]; any non-zero pixel counts as road.
    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            width: frame.width(),
            height: frame.height(),
            bits: frame.pixels().iter().map(|&p| (p > 0) as u8).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub k1: f64,
    pub k2: f64,
    pub block: u32,
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) || !(self.k2 > 0.0 && self.k2.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "k1, k2 must be positive, got {}, {}",
                self.k1, self.k2
            )));
        }
        if self.block < 3 || self.block % 2 == 0 {
            return Err(Error::InvalidParam(format!("block must be odd and >= 3, got {}", self.block)));
        }
        Ok(())
    }
}

/// Local mean and population standard deviation over a `block x block`
/// neighborhood, truncated at the image border.
pub fn local_stats(frame: &Frame, block: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    let (w, h) = frame.dims();
    if block % 2 == 0 || block > w.min(h) {
        return Err(Error::InvalidParam(format!(
            "block {block} must be odd and at most {}",
            w.min(h)
        )));
    }
    let (w, h) = (w as usize, h as usize);
    let r = (block / 2) as usize;

    // integral images over (w+1) x (h+1), exact in integers
    let stride = w + 1;
    let mut sum = vec![0u64; stride * (h + 1)];
    let mut sq = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0u64;
        let mut row_sq = 0u64;
        for x in 0..w {
            let v = frame.pixels()[y * w + x] as u64;
            row_sum += v;
            row_sq += v * v;
            sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row_sum;
            sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
        }
    }
    let rect = |t: &[u64], x0: usize, y0: usize, x1: usize, y1: usize| -> u64 {
        t[y1 * stride + x1] + t[y0 * stride + x0] - t[y0 * stride + x1] - t[y1 * stride + x0]
    };

    let mut mean = vec![0.0; w * h];
    let mut std = vec![0.0; w * h];
    mean.par_chunks_mut(w)
        .zip(std.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (mrow, srow))| {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r + 1).min(h);
            for x in 0..w {
                let x0 = x.saturating_sub(r);
                let x1 = (x + r + 1).min(w);
                let n = ((x1 - x0) * (y1 - y0)) as u128;
                let s = rect(&sum, x0, y0, x1, y1) as u128;
                let q = rect(&sq, x0, y0, x1, y1) as u128;
                mrow[x] = s as f64 / n as f64;
                // n*q - s^2 >= 0 by Cauchy-Schwarz
                let var_num = n * q - s * s;
                srow[x] = (var_num as f64).sqrt() / n as f64;
            }
        });
    Ok((mean, std))
}

/// The thresholding inequality for one pixel.
#[inline]
pub fn is_road_pixel(value: f64, mean: f64, std: f64, k1: f64, k2: f64) -> bool {
    let lower = (mean - k1 * std) / k2;
    let upper = (mean + k1 * std) / (k1 + k2);
    lower <= value && value <= upper
}

pub fn adaptive_road_mask(background: &Frame, params: MaskParams) -> Result<Mask> {
    params.validate()?;
    let (mean, std) = local_stats(background, params.block)?;
    let bits = background
        .pixels()
        .par_iter()
        .zip(mean.par_iter().zip(std.par_iter()))
        .map(|(&t, (&m, &s))| is_road_pixel(t as f64, m, s, params.k1, params.k2) as u8)
        .collect();
    Mask::new(background.width(), background.height(), bits)
}

pub fn mask_union(masks: &[Mask]) -> Result<Mask> {
    let first = masks.first().ok_or(Error::EmptyInput("union of zero masks"))?;
    let mut out = first.clone();
    for m in &masks[1..] {
        if m.dims() != out.dims() {
            return Err(Error::DimensionMismatch {
                expected: out.dims(),
                found: m.dims(),
            });
        }
        for (o, &b) in out.bits.iter_mut().zip(&m.bits) {
            *o |= b;
        }
    }
    Ok(out)
}

/// Fraction of the box's pixels that are road.
pub fn road_fraction(bbox: &BBox, mask: &Mask) -> Result<f64> {
    if !bbox.fits(mask.width, mask.height) {
        return Err(Error::InvalidBBox(format!(
            "{bbox:?} outside {}x{} mask",
            mask.width, mask.height
        )));
    }
    let mut road = 0u64;
    for y in bbox.y..bbox.bottom() {
        let row = y as usize * mask.width as usize;
        road += mask.bits[row + bbox.x as usize..row + bbox.right() as usize]
            .iter()
            .map(|&b| b as u64)
            .sum::<u64>();
    }
    Ok(road as f64 / bbox.area() as f64)
}

pub fn bbox_on_road(bbox: &BBox, mask: &Mask, min_overlap: f64) -> Result<bool> {
    if !(min_overlap > 0.0 && min_overlap <= 1.0) {
        return Err(Error::InvalidParam(format!("min_overlap {min_overlap} outside (0,1]")));
    }
    Ok(road_fraction(bbox, mask)? >= min_overlap)
}

/// Agreement of one `(k1, k2)` cell with a known road layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationCell {
    pub k1: f64,
    pub k2: f64,
    /// Share of true road pixels marked road.
    pub recall: f64,
    /// Share of off-road pixels marked road.
    pub false_positive_rate: f64,
}

/// Default search grid: k1 in 0.5..=3.0 and k2 in 0.25..=2.0, step 0.25.
pub fn default_grid() -> (Vec<f64>, Vec<f64>) {
    (
        (2..=12).map(|i| i as f64 * 0.25).collect(),
        (1..=8).map(|i| i as f64 * 0.25).collect(),
    )
}

pub fn evaluate_mask(mask: &Mask, truth: &Mask) -> Result<(f64, f64)> {
    if mask.dims() != truth.dims() {
        return Err(Error::DimensionMismatch {
            expected: truth.dims(),
            found: mask.dims(),
        });
    }
    let (mut hit, mut road, mut false_pos, mut off) = (0usize, 0usize, 0usize, 0usize);
    for (&m, &t) in mask.bits.iter().zip(&truth.bits) {
        if t == 1 {
            road += 1;
            hit += m as usize;
        } else {
            off += 1;
            false_pos += m as usize;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((ratio(hit, road), ratio(false_pos, off)))
}

/// Scores every grid cell on `image` against `truth`, k1-major.
pub fn calibrate(image: &Frame, truth: &Mask, block: u32, k1s: &[f64], k2s: &[f64]) -> Result<Vec<CalibrationCell>> {
    let (mean, std) = local_stats(image, block)?;
    let mut cells = Vec::with_capacity(k1s.len() * k2s.len());
    for &k1 in k1s {
        for &k2 in k2s {
            MaskParams { k1, k2, block }.validate()?;
            let bits = image
                .pixels()
                .iter()
                .zip(mean.iter().zip(&std))
                .map(|(&t, (&m, &s))| is_road_pixel(t as f64, m, s, k1, k2) as u8)
                .collect();
            let mask = Mask::new(image.width(), image.height(), bits)?;
            let (recall, false_positive_rate) = evaluate_mask(&mask, truth)?;
            cells.push(CalibrationCell {
                k1,
                k2,
                recall,
                false_positive_rate,
            });
        }
    }
    Ok(cells)
}

/// The cell maximising `recall - false_positive_rate`; the earliest wins ties.
pub fn best_cell(cells: &[CalibrationCell]) -> Option<CalibrationCell> {
    cells.iter().copied().fold(None, |best, c| match best {
        Some(b) if b.recall - b.false_positive_rate >= c.recall - c.false_positive_rate => Some(b),
        _ => Some(c),
    })
}
