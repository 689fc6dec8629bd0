//! Python bindings. Images cross the boundary as `bytes` of row-major 8-bit
//! pixels plus explicit width and height.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use stalldet::anomaly;
use stalldet::background;
use stalldet::mask::{self, MaskParams};
use stalldet::media::{BBox, Frame, GroundTruthEntry, Prediction};
use stalldet::pipeline;
use stalldet::scoring;
use stalldet::sorter::{self, Histogram, PeakParams};
use stalldet::synth::{self, CorpusFormat};
use stalldet::PipelineConfig;

create_exception!(stalldet_py, StalldetError, PyException);

fn err(e: stalldet::Error) -> PyErr {
    StalldetError::new_err(e.to_string())
}

fn bbox(b: (u32, u32, u32, u32)) -> PyResult<BBox> {
    BBox::new(b.0, b.1, b.2, b.3).map_err(err)
}

fn frame(pixels: &[u8], width: u32, height: u32) -> PyResult<Frame> {
    Frame::new(width, height, pixels.to_vec()).map_err(err)
}

/// Intersection over union of two `(x, y, w, h)` boxes.
#[pyfunction]
fn iou(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> PyResult<f64> {
    Ok(anomaly::iou(&bbox(a)?, &bbox(b)?))
}

#[pyfunction]
fn s4(f1: f64, rmse: f64) -> f64 {
    scoring::s4(f1, rmse)
}

#[pyfunction]
fn nrmse(rmse: f64) -> f64 {
    scoring::nrmse(rmse)
}

#[pyfunction]
fn f1(tp: usize, fp: usize, fn_: usize) -> PyResult<f64> {
    scoring::f1_counts(tp, fp, fn_).map_err(err)
}

/// Per-pixel median of equally sized frames.
#[pyfunction]
fn median_frame<'py>(py: Python<'py>, frames: Vec<Vec<u8>>, width: u32, height: u32) -> PyResult<Bound<'py, PyBytes>> {
    let frames = frames
        .iter()
        .map(|p| frame(p, width, height))
        .collect::<PyResult<Vec<_>>>()?;
    let m = background::median_frame(&frames).map_err(err)?;
    Ok(PyBytes::new(py, m.pixels()))
}

/// Road mask of a background image; returns one byte per pixel, 1 for road.
#[pyfunction]
#[pyo3(signature = (pixels, width, height, k1, k2, block = 31))]
fn road_mask<'py>(
    py: Python<'py>,
    pixels: Vec<u8>,
    width: u32,
    height: u32,
    k1: f64,
    k2: f64,
    block: u32,
) -> PyResult<Bound<'py, PyBytes>> {
    let f = frame(&pixels, width, height)?;
    let m = mask::adaptive_road_mask(&f, MaskParams { k1, k2, block }).map_err(err)?;
    Ok(PyBytes::new(py, m.bits()))
}

/// Lighting class ("Day", "Night" or "Snow") of frames by their mean histogram.
#[pyfunction]
fn classify_lighting(frames: Vec<Vec<u8>>) -> PyResult<String> {
    let mut weights = [0.0f64; 256];
    for f in &frames {
        for &p in f {
            weights[p as usize] += 1.0 / f.len() as f64;
        }
    }
    let hist = Histogram::from_weights(&weights).map_err(err)?;
    Ok(sorter::classify_lighting(&hist, PeakParams::default()).as_str().to_string())
}

/// Match predictions `(video_id, start, end, confidence)` to ground truth
/// `(video_id, start, end)`; returns `(tp, fp, fn, squared_error)`.
#[pyfunction]
#[pyo3(signature = (predictions, ground_truth, window = scoring::DEFAULT_MATCH_WINDOW))]
fn match_events(
    predictions: Vec<(String, f64, f64, f64)>,
    ground_truth: Vec<(String, f64, f64)>,
    window: f64,
) -> PyResult<(usize, usize, usize, f64)> {
    let preds: Vec<Prediction> = predictions
        .into_iter()
        .map(|(video_id, start, end, confidence)| Prediction { video_id, start, end, confidence })
        .collect();
    let gts = ground_truth
        .into_iter()
        .map(|(v, s, e)| GroundTruthEntry::new(v, s, e))
        .collect::<stalldet::Result<Vec<_>>>()
        .map_err(err)?;
    let m = scoring::match_events(&preds, &gts, window).map_err(err)?;
    Ok((m.tp(), m.false_positives, m.false_negatives, m.squared_error()))
}

/// Scores two CSV files and returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (pred_csv, gt_csv, config_json = None))]
fn score_files(py: Python<'_>, pred_csv: PathBuf, gt_csv: PathBuf, config_json: Option<String>) -> PyResult<String> {
    let cfg = config(config_json)?;
    let report = py
        .detach(|| pipeline::stage_score(&pred_csv, &gt_csv, &cfg))
        .map_err(err)?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

fn config(json: Option<String>) -> PyResult<PipelineConfig> {
    match json {
        Some(text) => PipelineConfig::from_json(&text).map_err(err),
        None => Ok(PipelineConfig::default()),
    }
}

/// The default configuration as JSON text.
#[pyfunction]
fn default_config() -> String {
    PipelineConfig::default().to_json()
}

/// Writes the standard 12-video synthetic corpus; returns the video ids.
#[pyfunction]
#[pyo3(signature = (out, width = 320, height = 240, fps = 10.0, duration = 300.0, seed = stalldet::config::DEFAULT_SEED))]
fn synth_corpus(
    py: Python<'_>,
    out: PathBuf,
    width: u32,
    height: u32,
    fps: f64,
    duration: f64,
    seed: u64,
) -> PyResult<Vec<String>> {
    if !(fps > 0.0 && duration > 0.0) {
        return Err(PyValueError::new_err("fps and duration must be positive"));
    }
    let format = CorpusFormat { width, height, fps, duration };
    let specs = py
        .detach(|| synth::corpus(&synth::standard_presets(), &format, seed, &out))
        .map_err(err)?;
    Ok(specs.into_iter().map(|s| s.video_id).collect())
}

/// Runs every stage over a corpus. Returns the manifest as JSON text.
#[pyfunction]
#[pyo3(signature = (input, out, config_json = None, mask_out = None))]
fn run_all(
    py: Python<'_>,
    input: PathBuf,
    out: PathBuf,
    config_json: Option<String>,
    mask_out: Option<PathBuf>,
) -> PyResult<String> {
    let cfg = config(config_json)?;
    let result = py
        .detach(|| pipeline::run_all(&input, &out, &cfg, mask_out.as_deref()))
        .map_err(err)?;
    Ok(serde_json::to_string(&result.manifest).expect("manifest serializes"))
}

#[pymodule]
fn stalldet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("StalldetError", m.py().get_type::<StalldetError>())?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(s4, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(median_frame, m)?)?;
    m.add_function(wrap_pyfunction!(road_mask, m)?)?;
    m.add_function(wrap_pyfunction!(classify_lighting, m)?)?;
    m.add_function(wrap_pyfunction!(match_events, m)?)?;
    m.add_function(wrap_pyfunction!(score_files, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    Ok(())
}
