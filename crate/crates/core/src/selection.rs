//! Peak-to-candidate selection: sharpness refinement around each peak, the
//! CBT score, and the keep/drop gate.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;

use crate::config::{IngestConfig, PipelineConfig};
use crate::error::{Error, Result};
use crate::ingest::{self, FrameSequence};
use crate::numfmt::format_sig;
use crate::signals;

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateFrame {
    pub frame_index: u64,
    pub time_s: f64,
    /// Colorfulness of the preprocessed frame.
    pub c_ratio: f64,
    pub b_ratio: f64,
    pub sharpness: f64,
    pub cbt_value: f64,
    pub kept: bool,
}

/// `sqrt(c_ratio^2 * b_ratio)`, computed as `c_ratio * sqrt(b_ratio)`.
pub fn cbt_metric(c_ratio: f64, b_ratio: f64) -> Result<f64> {
    if !(c_ratio >= 0.0 && b_ratio >= 0.0) || !c_ratio.is_finite() || !b_ratio.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "CBT inputs must be finite and non-negative, got c={c_ratio} b={b_ratio}"
        )));
    }
    Ok(c_ratio * b_ratio.sqrt())
}

/// Sequence positions examined around `peak`: `count` frames spaced `step`
/// apart, centered on the peak, clipped to `0..len`.
pub fn refine_positions(peak: usize, len: usize, step: usize, count: usize) -> Vec<usize> {
    let before = (count.saturating_sub(1)) / 2;
    (0..count)
        .filter_map(|k| {
            let offset = (k as i64 - before as i64) * step as i64;
            let pos = peak as i64 + offset;
            (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
        })
        .collect()
}

/// Picks the position with the highest score among [`refine_positions`].
/// Ties go to the peak itself, then to the smallest position.
pub fn refine_by<F>(peak: usize, len: usize, step: usize, count: usize, mut score: F) -> Result<usize>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut best: Option<(usize, f64)> = None;
    let mut peak_score = None;
    for pos in refine_positions(peak, len, step, count) {
        let s = score(pos)?;
        if pos == peak {
            peak_score = Some(s);
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((pos, s));
        }
    }
    Ok(match (best, peak_score) {
        (Some((_, b)), Some(p)) if p == b => peak,
        (Some((pos, _)), _) => pos,
        (None, _) => peak,
    })
}

fn preprocessed_sharpness(seq: &FrameSequence, pos: usize, cfg: &IngestConfig) -> Result<f64> {
    let (index, frame) = &seq.frames()[pos];
    ingest::preprocess(frame, cfg)
        .and_then(|f| signals::sharpness(&ingest::to_grayscale(&f)))
        .map_err(|e| e.at_frame(*index))
}

/// Sharpest frame index near `peak` on the preprocessed grayscale frames.
pub fn refine_by_sharpness(
    peak: u64,
    seq: &FrameSequence,
    step: usize,
    count: usize,
    cfg: &IngestConfig,
) -> Result<u64> {
    if step == 0 || count == 0 {
        return Err(Error::InvalidArgument("refinement step and count must be >= 1".into()));
    }
    let pos = seq
        .position_of(peak)
        .ok_or_else(|| Error::InvalidArgument(format!("peak frame {peak} not in sequence")))?;
    let best = refine_by(pos, seq.len(), step, count, |p| preprocessed_sharpness(seq, p, cfg))?;
    Ok(seq.frames()[best].0)
}

/// Scores the frame at `pos`: colorfulness, binarization ratio, sharpness, CBT.
/// Gray inputs have zero colorfulness.
pub fn score_frame(seq: &FrameSequence, pos: usize, cfg: &PipelineConfig) -> Result<CandidateFrame> {
    let (index, frame) = &seq.frames()[pos];
    let scored = (|| {
        let pre = ingest::preprocess(frame, &cfg.ingest)?;
        let gray = ingest::to_grayscale(&pre);
        let c_ratio = if pre.channels() == 3 {
            signals::colorfulness(&pre)?
        } else {
            0.0
        };
        let b_ratio = signals::binarization_ratio(&gray)?;
        let sharpness = signals::sharpness(&gray)?;
        let cbt_value = cbt_metric(c_ratio, b_ratio)?;
        let sel = &cfg.selection;
        let kept = !sel.gate || (cbt_value > sel.cbt_threshold && sharpness > sel.sharpness_threshold);
        Ok(CandidateFrame {
            frame_index: *index,
            time_s: *index as f64 / seq.frame_rate(),
            c_ratio,
            b_ratio,
            sharpness,
            cbt_value,
            kept,
        })
    })();
    scored.map_err(|e: Error| e.at_frame(*index))
}

/// Refines and scores every distinct peak. Returns one entry per distinct
/// refined frame, ordered by frame index, with the gate decision in `kept`.
pub fn evaluate_candidates(
    seq: &FrameSequence,
    peaks: &[u64],
    cfg: &PipelineConfig,
) -> Result<Vec<CandidateFrame>> {
    let sel = &cfg.selection;
    let peak_positions: BTreeSet<usize> = peaks
        .iter()
        .map(|&p| {
            seq.position_of(p)
                .ok_or_else(|| Error::InvalidArgument(format!("peak frame {p} not in sequence")))
        })
        .collect::<Result<_>>()?;

    let refined: BTreeSet<usize> = if sel.refine {
        let needed: BTreeSet<usize> = peak_positions
            .iter()
            .flat_map(|&p| refine_positions(p, seq.len(), sel.step, sel.count))
            .collect();
        let needed: Vec<usize> = needed.into_iter().collect();
        let scores: BTreeMap<usize, f64> = needed
            .par_iter()
            .map(|&p| preprocessed_sharpness(seq, p, &cfg.ingest).map(|s| (p, s)))
            .collect::<Result<_>>()?;
        peak_positions
            .iter()
            .map(|&p| refine_by(p, seq.len(), sel.step, sel.count, |q| Ok(scores[&q])))
            .collect::<Result<_>>()?
    } else {
        peak_positions
    };

    let refined: Vec<usize> = refined.into_iter().collect();
    refined
        .par_iter()
        .map(|&p| score_frame(seq, p, cfg))
        .collect()
}

/// The candidates that pass the gate.
pub fn select_candidates(
    seq: &FrameSequence,
    peaks: &[u64],
    cfg: &PipelineConfig,
) -> Result<Vec<CandidateFrame>> {
    Ok(evaluate_candidates(seq, peaks, cfg)?
        .into_iter()
        .filter(|c| c.kept)
        .collect())
}

pub fn write_candidates_csv(path: &Path, candidates: &[CandidateFrame]) -> Result<()> {
    let mut out = String::from("frame_index,time_s,c_ratio,b_ratio,sharpness,cbt_value,kept\n");
    for c in candidates {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.frame_index,
            format_sig(c.time_s, 9),
            format_sig(c.c_ratio, 9),
            format_sig(c.b_ratio, 9),
            format_sig(c.sharpness, 9),
            format_sig(c.cbt_value, 9),
            c.kept
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
