//! Frame filtration and detection pipeline for checkout-counter videos.
//!
//! A directory of frames goes through ROI cropping and per-frame signals
//! (binarization ratio, colorfulness, sharpness), the signal series is
//! smoothed and its local maxima become candidate frames, candidates are
//! refined by sharpness and gated, and each surviving frame is masked,
//! cropped and classified. Detections are de-duplicated in time and scored
//! against ground truth with macro-F1.

pub mod adapters;
pub mod cli;
pub mod config;
pub mod datasetprep;
pub mod detect;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod manifest;
pub mod masking;
pub mod numfmt;
pub mod plot;
pub mod selection;
pub mod signals;
pub mod smoothing;
pub mod synthgen;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use ingest::{FramePixels, FrameSequence};
pub use signals::{BinaryMask, SignalSeries};
