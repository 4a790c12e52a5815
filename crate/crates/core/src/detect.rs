//! Per-video orchestration and duplicate suppression.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::{self, Classifier, Segmenter, SegmenterRole};
use crate::config::{AdaptersConfig, PipelineConfig};
use crate::error::{Error, Result};
use crate::ingest::{self, FramePixels, FrameSequence};
use crate::masking::{self, BoundingBox, EntropySpec};
use crate::selection::{self, CandidateFrame};
use crate::signals::{self, BinaryMask, SignalSeries};
use crate::smoothing::{self, Peak};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub class_id: u16,
    pub frame_index: u64,
    /// `frame_index / frame_rate`.
    pub time_s: f64,
}

/// The three model seats of the pipeline.
pub struct Adapters {
    pub product: Box<dyn Segmenter>,
    pub hand: Box<dyn Segmenter>,
    pub classifier: Box<dyn Classifier>,
}

impl Adapters {
    pub fn from_config(cfg: &AdaptersConfig) -> Result<Self> {
        Ok(Adapters {
            product: adapters::build_segmenter(&cfg.product, SegmenterRole::Product)?,
            hand: adapters::build_segmenter(&cfg.hand, SegmenterRole::Hand)?,
            classifier: adapters::build_classifier(&cfg.classifier)?,
        })
    }
}

/// Result of masking one candidate frame.
#[derive(Clone, Debug)]
pub struct MaskOutcome {
    /// Final combined mask, in ROI coordinates (or crop coordinates after a
    /// re-segmentation pass).
    pub mask: BinaryMask,
    /// Boxes of the selected contours in ROI coordinates.
    pub boxes: Vec<BoundingBox>,
    pub crops: Vec<FramePixels>,
}

fn entropy_input(frame: &FramePixels) -> FramePixels {
    ingest::to_grayscale(frame)
}

fn mask_pass(
    frame: &FramePixels,
    product: &BinaryMask,
    hand: &BinaryMask,
    cfg: &PipelineConfig,
) -> Result<(BinaryMask, Vec<BoundingBox>)> {
    let entropy = masking::entropy_mask(&entropy_input(frame), &EntropySpec::from(&cfg.masking))?;
    let combined = masking::combine_masks(product, hand, &entropy)?;
    let contours = masking::find_contours(&combined);
    let chosen = masking::select_contours(&contours, cfg.masking.contour_mode);
    let boxes = chosen
        .iter()
        .map(|c| masking::padded_box(&c.bbox, cfg.masking.pad, frame.width(), frame.height()))
        .collect();
    Ok((combined, boxes))
}

/// Segments, entropy-masks and crops one ROI frame. An empty final mask
/// gives an outcome with no crops.
pub fn mask_candidate(
    roi: &FramePixels,
    frame_key: &str,
    cfg: &PipelineConfig,
    adapters: &Adapters,
) -> Result<MaskOutcome> {
    let product = adapters.product.segment(roi, frame_key)?;
    let hand = adapters.hand.segment(roi, frame_key)?;
    let (mask, boxes) = mask_pass(roi, &product, &hand, cfg)?;
    if !cfg.masking.re_segment {
        let crops = boxes
            .iter()
            .map(|b| roi.sub_image(b.x0, b.y0, b.width(), b.height()))
            .collect::<Result<_>>()?;
        return Ok(MaskOutcome { mask, boxes, crops });
    }

    // second pass on each crop, reusing the segmenter masks cut to the box
    let mut out_boxes = Vec::new();
    let mut crops = Vec::new();
    let mut last_mask = mask;
    for b in &boxes {
        let crop = roi.sub_image(b.x0, b.y0, b.width(), b.height())?;
        let p = product.sub_mask(b.x0, b.y0, b.width(), b.height());
        let h = hand.sub_mask(b.x0, b.y0, b.width(), b.height());
        let (inner_mask, inner_boxes) = mask_pass(&crop, &p, &h, cfg)?;
        for ib in inner_boxes {
            crops.push(crop.sub_image(ib.x0, ib.y0, ib.width(), ib.height())?);
            out_boxes.push(BoundingBox {
                x0: b.x0 + ib.x0,
                y0: b.y0 + ib.y0,
                x1: b.x0 + ib.x1,
                y1: b.y0 + ib.y1,
            });
        }
        last_mask = inner_mask;
    }
    Ok(MaskOutcome {
        mask: last_mask,
        boxes: out_boxes,
        crops,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Every intermediate product of one pipeline run.
#[derive(Clone, Debug)]
pub struct PipelineTrace {
    pub series: SignalSeries,
    pub smoothed: SignalSeries,
    pub peaks: Vec<Peak>,
    pub candidates: Vec<CandidateFrame>,
    /// Raw detections ordered by frame index, before duplicate removal.
    pub detections: Vec<Detection>,
    pub timings: Vec<StageTiming>,
}

struct Timer(Vec<StageTiming>, Instant);

impl Timer {
    fn new() -> Self {
        Timer(Vec::new(), Instant::now())
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.0.push(StageTiming {
            stage: stage.into(),
            seconds: (now - self.1).as_secs_f64(),
        });
        self.1 = now;
    }
}

/// Classifies the kept candidates. With masking disabled the whole ROI is
/// classified.
pub fn detect_candidates(
    seq: &FrameSequence,
    candidates: &[CandidateFrame],
    cfg: &PipelineConfig,
    adapters: &Adapters,
) -> Result<Vec<Detection>> {
    let per_frame: Vec<Vec<Detection>> = candidates
        .par_iter()
        .filter(|c| c.kept)
        .map(|c| {
            let frame = seq
                .get(c.frame_index)
                .ok_or_else(|| Error::InvalidArgument(format!("candidate frame {} not in sequence", c.frame_index)))?;
            let key = adapters::frame_key(seq.video_id(), c.frame_index);
            let roi = ingest::crop_roi(frame, cfg.ingest.crop_fraction)?;
            let crops = if cfg.masking.enabled {
                mask_candidate(&roi, &key, cfg, adapters)?.crops
            } else {
                vec![roi]
            };
            crops
                .iter()
                .map(|crop| {
                    let p = adapters.classifier.classify(crop, &key)?;
                    Ok(Detection {
                        video_id: seq.video_id().to_string(),
                        class_id: p.class_id,
                        frame_index: c.frame_index,
                        time_s: c.frame_index as f64 / seq.frame_rate(),
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_frame(c.frame_index))
        })
        .collect::<Result<_>>()?;
    Ok(per_frame.into_iter().flatten().collect())
}

/// Signals, smoothing, peaks, selection, masking and classification, keeping
/// every intermediate result.
pub fn trace_pipeline(seq: &FrameSequence, cfg: &PipelineConfig, adapters: &Adapters) -> Result<PipelineTrace> {
    cfg.validate()?;
    let mut timer = Timer::new();
    let series = signals::compute_series(seq, cfg.signals.metric, &cfg.ingest)?;
    timer.lap("signals");
    let smoothed = smoothing::smooth_lenient(&series, &cfg.smoothing)?;
    timer.lap("smooth");
    let peaks = smoothing::find_peaks(&smoothed, cfg.smoothing.min_prominence);
    timer.lap("peaks");
    let peak_indices: Vec<u64> = peaks.iter().map(|p| p.frame_index).collect();
    let candidates = selection::evaluate_candidates(seq, &peak_indices, cfg)?;
    timer.lap("select");
    let detections = detect_candidates(seq, &candidates, cfg, adapters)?;
    timer.lap("detect");
    Ok(PipelineTrace {
        series,
        smoothed,
        peaks,
        candidates,
        detections,
        timings: timer.0,
    })
}

/// Raw detections sorted by frame index.
pub fn run_pipeline(seq: &FrameSequence, cfg: &PipelineConfig, adapters: &Adapters) -> Result<Vec<Detection>> {
    Ok(trace_pipeline(seq, cfg, adapters)?.detections)
}

/// [`run_pipeline`] followed by [`dedupe`] when the config enables it.
pub fn detect_video(seq: &FrameSequence, cfg: &PipelineConfig, adapters: &Adapters) -> Result<Vec<Detection>> {
    let raw = run_pipeline(seq, cfg, adapters)?;
    Ok(if cfg.detect.dedupe {
        dedupe(&raw, cfg.detect.dedupe_window_s)
    } else {
        raw
    })
}

/// Drops a detection when an earlier kept detection of the same video and
/// class lies within `window_s`. Only kept detections anchor the window.
/// Expects time-sorted input.
pub fn dedupe(detections: &[Detection], window_s: f64) -> Vec<Detection> {
    let mut anchors: HashMap<(&str, u16), f64> = HashMap::new();
    let mut kept = Vec::new();
    for d in detections {
        let key = (d.video_id.as_str(), d.class_id);
        if anchors.get(&key).is_some_and(|&t| (d.time_s - t).abs() <= window_s) {
            continue;
        }
        anchors.insert(key, d.time_s);
        kept.push(d.clone());
    }
    kept
}

/// Challenge-style CSV: `video_id,class_id,time_s` with whole seconds.
pub fn write_detections_csv(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut out = String::from("video_id,class_id,time_s\n");
    for d in detections {
        out.push_str(&format!("{},{},{}\n", d.video_id, d.class_id, d.time_s.round() as i64));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Full-precision CSV: `video_id,class_id,frame_index,time_s`.
pub fn write_detections_full_csv(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut out = String::from("video_id,class_id,frame_index,time_s\n");
    for d in detections {
        out.push_str(&format!("{},{},{},{}\n", d.video_id, d.class_id, d.frame_index, d.time_s));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_detections_full_csv(path: &Path) -> Result<Vec<Detection>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["video_id", "class_id", "frame_index", "time_s"] {
        return Err(Error::InvalidArgument(format!(
            "{}: expected header video_id,class_id,frame_index,time_s",
            path.display()
        )));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}
