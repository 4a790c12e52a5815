//! Pipeline configuration.
//!
//! One TOML file with a section per stage. Every field has a default, so an
//! empty file is the default pipeline. The ablation presets in `presets/` are
//! compiled in and reachable through [`PipelineConfig::preset`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::{ClassifierConfig, SegmenterConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ingest: IngestConfig,
    pub signals: SignalsConfig,
    pub smoothing: SmoothingConfig,
    pub selection: SelectionConfig,
    pub masking: MaskingConfig,
    pub detect: DetectConfig,
    pub evaluation: EvaluationConfig,
    pub adapters: AdaptersConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Frames per second of the input when the frame directory carries none.
    pub frame_rate: f64,
    /// Total share removed per axis, split evenly between both sides.
    pub crop_fraction: f64,
    pub gain: f64,
    pub bias: f64,
    pub resize_width: usize,
    pub resize_height: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            frame_rate: 60.0,
            crop_fraction: 0.25,
            gain: 1.1,
            bias: 5.0,
            resize_width: 224,
            resize_height: 224,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BinarizationRatio,
    Colorfulness,
    Sharpness,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::BinarizationRatio => "binarization_ratio",
            Metric::Colorfulness => "colorfulness",
            Metric::Sharpness => "sharpness",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalsConfig {
    /// Signal whose smoothed maxima propose candidate frames.
    pub metric: Metric,
}

impl Default for SignalsConfig {
    fn default() -> Self {
        SignalsConfig {
            metric: Metric::Colorfulness,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMethod {
    Savgol,
    Fft,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub method: SmoothingMethod,
    pub window: usize,
    pub polyorder: usize,
    pub keep_fraction: f64,
    pub min_prominence: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            method: SmoothingMethod::Fft,
            window: 31,
            polyorder: 3,
            keep_fraction: 0.05,
            min_prominence: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Move each peak to the sharpest frame of its neighborhood.
    pub refine: bool,
    pub step: usize,
    pub count: usize,
    /// Apply the sharpness and CBT gates. Off keeps every refined peak.
    pub gate: bool,
    pub sharpness_threshold: f64,
    pub cbt_threshold: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            refine: true,
            step: 7,
            count: 7,
            gate: true,
            sharpness_threshold: 111.0,
            cbt_threshold: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeMethod {
    Otsu,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ContourMode {
    Max,
    Rms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    /// Segment, mask and crop candidates before classification. Off sends the
    /// whole ROI to the classifier.
    pub enabled: bool,
    pub entropy_radius: usize,
    pub entropy_bins: usize,
    pub binarize: BinarizeMethod,
    /// Entropy threshold in bits, used when `binarize = "fixed"`.
    pub fixed_threshold: f64,
    pub contour_mode: ContourMode,
    pub pad: usize,
    pub re_segment: bool,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            enabled: true,
            entropy_radius: 5,
            entropy_bins: 256,
            binarize: BinarizeMethod::Otsu,
            fixed_threshold: 0.0,
            contour_mode: ContourMode::Max,
            pad: 0,
            re_segment: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub dedupe: bool,
    pub dedupe_window_s: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            dedupe: true,
            dedupe_window_s: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Average over all 116 classes instead of the classes observed.
    pub fixed_q: bool,
    /// Weight per-class F1 by ground-truth support.
    pub weighted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptersConfig {
    pub product: SegmenterConfig,
    pub hand: SegmenterConfig,
    pub classifier: ClassifierConfig,
}

impl Default for AdaptersConfig {
    fn default() -> Self {
        AdaptersConfig {
            product: SegmenterConfig::Null,
            hand: SegmenterConfig::Null,
            classifier: ClassifierConfig::Constant { class_id: 1 },
        }
    }
}

const PRESETS: &[(&str, &str)] = &[
    (
        "frame_selection_binarized",
        include_str!("../../../presets/frame_selection_binarized.toml"),
    ),
    (
        "color_cbt",
        include_str!("../../../presets/color_cbt.toml"),
    ),
    (
        "color_seg_max_cbt",
        include_str!("../../../presets/color_seg_max_cbt.toml"),
    ),
    (
        "color_seg_max_dedupe_cbt",
        include_str!("../../../presets/color_seg_max_dedupe_cbt.toml"),
    ),
    (
        "color_seg_rms_dedupe_cbt",
        include_str!("../../../presets/color_seg_rms_dedupe_cbt.toml"),
    ),
    (
        "color_seg_max_dedupe_reseg_cbt",
        include_str!("../../../presets/color_seg_max_dedupe_reseg_cbt.toml"),
    ),
];

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        Self::from_toml_str(text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let i = &self.ingest;
        if !(i.frame_rate.is_finite() && i.frame_rate > 0.0) {
            return bad(format!("ingest.frame_rate must be > 0, got {}", i.frame_rate));
        }
        if !(0.0..1.0).contains(&i.crop_fraction) {
            return bad(format!("ingest.crop_fraction must lie in [0, 1), got {}", i.crop_fraction));
        }
        if !(i.gain.is_finite() && i.gain > 0.0) || !i.bias.is_finite() {
            return bad("ingest.gain must be > 0 and ingest.bias finite".into());
        }
        if i.resize_width == 0 || i.resize_height == 0 {
            return bad("ingest.resize_width/height must be > 0".into());
        }
        let s = &self.smoothing;
        if s.window < 3 || s.window.is_multiple_of(2) {
            return bad(format!("smoothing.window must be odd and >= 3, got {}", s.window));
        }
        if s.polyorder >= s.window {
            return bad(format!(
                "smoothing.polyorder ({}) must be below smoothing.window ({})",
                s.polyorder, s.window
            ));
        }
        if !(s.keep_fraction > 0.0 && s.keep_fraction <= 1.0) {
            return bad(format!("smoothing.keep_fraction must lie in (0, 1], got {}", s.keep_fraction));
        }
        if !(s.min_prominence.is_finite() && s.min_prominence >= 0.0) {
            return bad("smoothing.min_prominence must be >= 0".into());
        }
        let sel = &self.selection;
        if sel.step == 0 || sel.count == 0 {
            return bad("selection.step and selection.count must be >= 1".into());
        }
        if !sel.sharpness_threshold.is_finite() || !sel.cbt_threshold.is_finite() {
            return bad("selection thresholds must be finite".into());
        }
        let m = &self.masking;
        if m.entropy_radius == 0 {
            return bad("masking.entropy_radius must be >= 1".into());
        }
        if !(2..=256).contains(&m.entropy_bins) {
            return bad(format!("masking.entropy_bins must lie in 2..=256, got {}", m.entropy_bins));
        }
        if !m.fixed_threshold.is_finite() {
            return bad("masking.fixed_threshold must be finite".into());
        }
        if !(self.detect.dedupe_window_s.is_finite() && self.detect.dedupe_window_s >= 0.0) {
            return bad(format!(
                "detect.dedupe_window_s must be >= 0, got {}",
                self.detect.dedupe_window_s
            ));
        }
        self.adapters.classifier.validate()?;
        Ok(())
    }
}
