//! Python bindings: frames, per-frame signals, smoothing and peaks, masking,
//! detection, dedupe, scoring, synthetic scenarios and the full pipeline.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use framesift::adapters::{build_segmenter, ManifestClassifier, SegmenterConfig, SegmenterRole};
use framesift::datasetprep::{self, GradientShape, GradientSpec};
use framesift::detect::{self, Adapters};
use framesift::evaluation::{self, GroundTruthEvent, MacroOptions};
use framesift::masking::{self, EntropySpec};
use framesift::{ingest, selection, signals, smoothing, synthgen};
use framesift::{BinaryMask, Error, FramePixels, PipelineConfig, SignalSeries};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::NoFrames(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for framesift::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// An 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[pyclass(name = "Frame", module = "framesift_py", skip_from_py_object)]
#[derive(Clone)]
struct PyFrame(FramePixels);

#[pymethods]
impl PyFrame {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> PyResult<Self> {
        FramePixels::new(width, height, channels, data).map(PyFrame).or_py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ingest::read_frame(&path).map(PyFrame).or_py()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        ingest::write_frame(&path, &self.0).or_py()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.0.channels()
    }

    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.samples())
    }

    fn to_grayscale(&self) -> Self {
        PyFrame(ingest::to_grayscale(&self.0))
    }

    fn crop_roi(&self, crop_fraction: f64) -> PyResult<Self> {
        ingest::crop_roi(&self.0, crop_fraction).map(PyFrame).or_py()
    }

    fn __repr__(&self) -> String {
        format!("Frame({}x{}x{})", self.0.width(), self.0.height(), self.0.channels())
    }
}

#[pyclass(name = "Detection", module = "framesift_py", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyDetection {
    video_id: String,
    class_id: u16,
    frame_index: u64,
    time_s: f64,
}

#[pymethods]
impl PyDetection {
    #[new]
    fn new(video_id: String, class_id: u16, frame_index: u64, time_s: f64) -> Self {
        PyDetection {
            video_id,
            class_id,
            frame_index,
            time_s,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Detection({:?}, class_id={}, frame_index={}, time_s={})",
            self.video_id, self.class_id, self.frame_index, self.time_s
        )
    }
}

impl From<detect::Detection> for PyDetection {
    fn from(d: detect::Detection) -> Self {
        PyDetection::new(d.video_id, d.class_id, d.frame_index, d.time_s)
    }
}

impl From<&PyDetection> for detect::Detection {
    fn from(d: &PyDetection) -> Self {
        detect::Detection {
            video_id: d.video_id.clone(),
            class_id: d.class_id,
            frame_index: d.frame_index,
            time_s: d.time_s,
        }
    }
}

fn series(values: Vec<f64>) -> PyResult<SignalSeries> {
    SignalSeries::from_values("py", 1.0, values).or_py()
}

/// `(area, (x0, y0, x1, y1))` with inclusive bounds.
type ContourTuple = (usize, (usize, usize, usize, usize));
/// Per class `(tp, fp, fn)`.
type ClassCountMap = BTreeMap<u16, (usize, usize, usize)>;

fn mask_bytes(mask: &BinaryMask) -> Vec<u8> {
    mask.bits().iter().map(|&b| u8::from(b)).collect()
}

fn mask_from(width: usize, height: usize, bits: Vec<u8>) -> PyResult<BinaryMask> {
    BinaryMask::new(width, height, bits.into_iter().map(|b| b != 0).collect()).or_py()
}

#[pyfunction]
fn colorfulness(frame: &PyFrame) -> PyResult<f64> {
    signals::colorfulness(&frame.0).or_py()
}

#[pyfunction]
fn otsu_threshold(frame: &PyFrame) -> PyResult<u8> {
    signals::otsu_threshold(&ingest::to_grayscale(&frame.0)).or_py()
}

#[pyfunction]
fn binarization_ratio(frame: &PyFrame) -> PyResult<f64> {
    signals::binarization_ratio(&ingest::to_grayscale(&frame.0)).or_py()
}

#[pyfunction]
fn sharpness(frame: &PyFrame) -> PyResult<f64> {
    signals::sharpness(&ingest::to_grayscale(&frame.0)).or_py()
}

#[pyfunction]
fn cbt(c_ratio: f64, b_ratio: f64) -> PyResult<f64> {
    selection::cbt_metric(c_ratio, b_ratio).or_py()
}

#[pyfunction]
#[pyo3(signature = (values, window = 31, polyorder = 3))]
fn savgol(values: Vec<f64>, window: usize, polyorder: usize) -> PyResult<Vec<f64>> {
    Ok(smoothing::savgol_smooth(&series(values)?, window, polyorder).or_py()?.values().to_vec())
}

#[pyfunction]
#[pyo3(signature = (values, keep_fraction = 0.05))]
fn fft_lowpass(values: Vec<f64>, keep_fraction: f64) -> PyResult<Vec<f64>> {
    Ok(smoothing::fft_lowpass(&series(values)?, keep_fraction).or_py()?.values().to_vec())
}

/// Indices of local maxima with their prominence.
#[pyfunction]
#[pyo3(signature = (values, min_prominence = 0.0))]
fn find_peaks(values: Vec<f64>, min_prominence: f64) -> PyResult<Vec<(u64, f64)>> {
    let s = series(values)?;
    Ok(smoothing::find_peaks(&s, min_prominence)
        .into_iter()
        .map(|p| (p.frame_index, p.prominence))
        .collect())
}

/// Entropy mask of a frame as one byte (0 or 1) per pixel, row-major.
#[pyfunction]
#[pyo3(signature = (frame, radius = 5, bins = 256))]
fn entropy_mask(frame: &PyFrame, radius: usize, bins: usize) -> PyResult<Vec<u8>> {
    let spec = EntropySpec {
        neighborhood_radius: radius,
        bins,
        ..EntropySpec::default()
    };
    Ok(mask_bytes(&masking::entropy_mask(&ingest::to_grayscale(&frame.0), &spec).or_py()?))
}

/// 8-connected components of a 0/1 mask as `(area, (x0, y0, x1, y1))`, with
/// inclusive boxes, in raster order.
#[pyfunction]
fn find_contours(width: usize, height: usize, mask: Vec<u8>) -> PyResult<Vec<ContourTuple>> {
    let mask = mask_from(width, height, mask)?;
    Ok(masking::find_contours(&mask)
        .into_iter()
        .map(|c| (c.area, (c.bbox.x0, c.bbox.y0, c.bbox.x1, c.bbox.y1)))
        .collect())
}

#[pyfunction]
fn dedupe(detections: Vec<PyRef<'_, PyDetection>>, window_s: f64) -> Vec<PyDetection> {
    let ds: Vec<detect::Detection> = detections.iter().map(|d| (&**d).into()).collect();
    detect::dedupe(&ds, window_s).into_iter().map(Into::into).collect()
}

/// Scores detections against `(video_id, class_id, t_start, t_end)` events.
/// Returns the macro-F1 and per-class `(tp, fp, fn)` counts.
#[pyfunction]
#[pyo3(signature = (detections, ground_truth, fixed_q = false, weighted = false))]
fn evaluate(
    detections: Vec<PyRef<'_, PyDetection>>,
    ground_truth: Vec<(String, u16, f64, f64)>,
    fixed_q: bool,
    weighted: bool,
) -> PyResult<(f64, ClassCountMap)> {
    let ds: Vec<detect::Detection> = detections.iter().map(|d| (&**d).into()).collect();
    let gt: Vec<GroundTruthEvent> = ground_truth
        .into_iter()
        .map(|(video_id, class_id, t_start, t_end)| GroundTruthEvent {
            video_id,
            class_id,
            t_start,
            t_end,
        })
        .collect();
    let report = evaluation::match_detections(&ds, &gt).or_py()?;
    let f1 = evaluation::macro_f1(&report, MacroOptions { fixed_q, weighted }).or_py()?;
    let counts = report.classes.iter().map(|(c, k)| (*c, (k.tp, k.fp, k.fn_))).collect();
    Ok((f1, counts))
}

#[pyfunction]
#[pyo3(signature = (width, height, shape, inner_color, outer_color))]
fn gradient_background(
    width: usize,
    height: usize,
    shape: &str,
    inner_color: [u8; 3],
    outer_color: [u8; 3],
) -> PyResult<PyFrame> {
    let shape = match shape {
        "circular" => GradientShape::Circular,
        "rectangular" => GradientShape::Rectangular,
        other => return Err(PyValueError::new_err(format!("unknown gradient shape {other:?}"))),
    };
    let spec = GradientSpec {
        shape,
        inner_color,
        outer_color,
        center: None,
    };
    datasetprep::gradient_background(width, height, &spec).map(PyFrame).or_py()
}

/// Renders a scenario (TOML text, or the built-in one) into `out_dir`.
/// Returns the frame directory, ground-truth CSV and labels CSV paths.
#[pyfunction]
#[pyo3(signature = (out_dir, scenario = None, seed = None))]
fn synthesize(out_dir: PathBuf, scenario: Option<&str>, seed: Option<u64>) -> PyResult<(PathBuf, PathBuf, PathBuf)> {
    let mut spec = match scenario {
        Some(text) => synthgen::ScenarioSpec::from_toml_str(text).or_py()?,
        None => synthgen::ScenarioSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let out = synthgen::generate(&spec).or_py()?;
    let files = synthgen::write_output(&spec, &out, &out_dir).or_py()?;
    Ok((files.frame_dir, files.gt_csv, files.labels_csv))
}

fn resolve_config(config: Option<&str>, preset: Option<&str>) -> PyResult<PipelineConfig> {
    match (config, preset) {
        (Some(_), Some(_)) => Err(PyValueError::new_err("pass either config or preset, not both")),
        (Some(text), None) => PipelineConfig::from_toml_str(text).or_py(),
        (None, Some(name)) => PipelineConfig::preset(name).or_py(),
        (None, None) => Ok(PipelineConfig::default()),
    }
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    PipelineConfig::preset_names().collect()
}

/// Runs detection (and dedupe, when configured) over one frame directory.
/// `config` is TOML text; `labels` maps frame keys to classes and replaces
/// the configured classifier with a lookup, falling back to `default_class`.
#[pyfunction]
#[pyo3(signature = (frames, config = None, preset = None, frame_rate = None, labels = None, default_class = None))]
fn run_pipeline(
    py: Python<'_>,
    frames: PathBuf,
    config: Option<&str>,
    preset: Option<&str>,
    frame_rate: Option<f64>,
    labels: Option<HashMap<String, u16>>,
    default_class: Option<u16>,
) -> PyResult<Vec<PyDetection>> {
    let mut cfg = resolve_config(config, preset)?;
    if let Some(fps) = frame_rate {
        cfg.ingest.frame_rate = fps;
    }
    cfg.validate().or_py()?;
    let mut adapters = Adapters::from_config(&cfg.adapters).or_py()?;
    if let Some(labels) = labels {
        adapters.classifier = Box::new(ManifestClassifier::from_labels(labels, default_class).or_py()?);
        adapters.product = build_segmenter(&SegmenterConfig::Null, SegmenterRole::Product).or_py()?;
    }
    let dets = py
        .detach(|| -> framesift::Result<_> {
            let seq = ingest::load_frame_dir(&frames, cfg.ingest.frame_rate)?;
            detect::detect_video(&seq, &cfg, &adapters)
        })
        .or_py()?;
    Ok(dets.into_iter().map(Into::into).collect())
}

#[pymodule]
fn framesift_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrame>()?;
    m.add_class::<PyDetection>()?;
    m.add_function(wrap_pyfunction!(colorfulness, m)?)?;
    m.add_function(wrap_pyfunction!(otsu_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(binarization_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(sharpness, m)?)?;
    m.add_function(wrap_pyfunction!(cbt, m)?)?;
    m.add_function(wrap_pyfunction!(savgol, m)?)?;
    m.add_function(wrap_pyfunction!(fft_lowpass, m)?)?;
    m.add_function(wrap_pyfunction!(find_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_mask, m)?)?;
    m.add_function(wrap_pyfunction!(find_contours, m)?)?;
    m.add_function(wrap_pyfunction!(dedupe, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_background, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
