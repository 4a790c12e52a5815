//! Model seams: product segmenter, hand segmenter and classifier.
//!
//! Each adapter is either a lookup table keyed by frame, an external command
//! speaking a small file protocol, or a constant.
//!
//! Command protocol: the frame is written as PNG to `$IN` and the command is
//! run through `sh -c` with `IN` and `OUT` in its environment. A template that
//! never mentions `$IN` gets `"$IN" "$OUT"` appended. Segmenters write a PNG
//! mask to `$OUT`; classifiers print `class_id confidence` on stdout.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_frame, FramePixels};
use crate::signals::BinaryMask;

pub const MIN_CLASS: u16 = 1;
pub const MAX_CLASS: u16 = 116;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmenterConfig {
    /// Product slot: the whole frame. Hand slot: no hand anywhere.
    #[default]
    Null,
    Manifest { path: PathBuf },
    ExternalCommand {
        command: String,
        #[serde(default)]
        reentrant: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierConfig {
    Constant { class_id: u16 },
    Manifest {
        path: PathBuf,
        /// Answer for frames the manifest does not list; unset is an error.
        #[serde(default)]
        default_class: Option<u16>,
    },
    ExternalCommand {
        command: String,
        #[serde(default)]
        reentrant: bool,
    },
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Constant { class_id: 1 }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ClassifierConfig::Constant { class_id }
            | ClassifierConfig::Manifest {
                default_class: Some(class_id),
                ..
            } => check_class(*class_id),
            _ => Ok(()),
        }?;
        Ok(())
    }
}

fn check_class(class_id: u16) -> Result<()> {
    if (MIN_CLASS..=MAX_CLASS).contains(&class_id) {
        Ok(())
    } else {
        Err(Error::Adapter(format!(
            "class_id {class_id} outside {MIN_CLASS}..={MAX_CLASS}"
        )))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrediction {
    pub class_id: u16,
    /// Carried through but not used downstream.
    pub confidence: f64,
}

impl ClassPrediction {
    pub fn new(class_id: u16, confidence: f64) -> Result<Self> {
        check_class(class_id)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Adapter(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(ClassPrediction {
            class_id,
            confidence,
        })
    }
}

/// Key used by manifests: `<video_id>/<frame_index as %06d>`.
pub fn frame_key(video_id: &str, frame_index: u64) -> String {
    format!("{video_id}/{frame_index:06}")
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, frame: &FramePixels, frame_key: &str) -> Result<BinaryMask>;
}

pub trait Classifier: Send + Sync {
    fn classify(&self, crop: &FramePixels, frame_key: &str) -> Result<ClassPrediction>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmenterRole {
    Product,
    Hand,
}

pub struct NullSegmenter {
    pub fill: bool,
}

impl Segmenter for NullSegmenter {
    fn segment(&self, frame: &FramePixels, _frame_key: &str) -> Result<BinaryMask> {
        Ok(BinaryMask::filled(frame.width(), frame.height(), self.fill))
    }
}

/// Two-column CSV `frame_key,path_or_class`. A header row is optional.
fn read_manifest(path: &Path) -> Result<HashMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut map = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        if row.len() != 2 {
            return Err(Error::Adapter(format!(
                "{}: row {} has {} fields, expected 2",
                path.display(),
                i + 1,
                row.len()
            )));
        }
        if i == 0 && &row[0] == "frame_key" {
            continue;
        }
        map.insert(row[0].to_string(), row[1].to_string());
    }
    Ok(map)
}

pub struct ManifestSegmenter {
    masks: HashMap<String, PathBuf>,
}

impl ManifestSegmenter {
    /// Relative mask paths resolve against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let masks = read_manifest(path)?
            .into_iter()
            .map(|(k, v)| (k, base.join(v)))
            .collect();
        Ok(ManifestSegmenter { masks })
    }
}

fn check_mask_dims(mask: &BinaryMask, frame: &FramePixels) -> Result<()> {
    if mask.width() != frame.width() || mask.height() != frame.height() {
        return Err(Error::dims(frame.dims_string(), mask.dims_string()));
    }
    Ok(())
}

impl Segmenter for ManifestSegmenter {
    fn segment(&self, frame: &FramePixels, frame_key: &str) -> Result<BinaryMask> {
        let path = self
            .masks
            .get(frame_key)
            .ok_or_else(|| Error::Adapter(format!("no mask for frame key {frame_key:?}")))?;
        let mask = BinaryMask::read_png(path)?;
        check_mask_dims(&mask, frame)?;
        Ok(mask)
    }
}

pub struct ManifestClassifier {
    labels: HashMap<String, u16>,
    default_class: Option<u16>,
}

impl ManifestClassifier {
    pub fn load(path: &Path, default_class: Option<u16>) -> Result<Self> {
        let labels = read_manifest(path)?
            .into_iter()
            .map(|(k, v)| {
                let id: u16 = v
                    .parse()
                    .map_err(|_| Error::Adapter(format!("{}: bad class {v:?} for {k}", path.display())))?;
                check_class(id)?;
                Ok((k, id))
            })
            .collect::<Result<_>>()?;
        Self::from_labels(labels, default_class)
    }

    pub fn from_labels(labels: HashMap<String, u16>, default_class: Option<u16>) -> Result<Self> {
        for &id in labels.values().chain(default_class.iter()) {
            check_class(id)?;
        }
        Ok(ManifestClassifier { labels, default_class })
    }
}

impl Classifier for ManifestClassifier {
    fn classify(&self, _crop: &FramePixels, frame_key: &str) -> Result<ClassPrediction> {
        let id = self
            .labels
            .get(frame_key)
            .copied()
            .or(self.default_class)
            .ok_or_else(|| Error::Adapter(format!("no class for frame key {frame_key:?}")))?;
        ClassPrediction::new(id, 1.0)
    }
}

pub struct ConstantClassifier {
    pub class_id: u16,
}

impl Classifier for ConstantClassifier {
    fn classify(&self, _crop: &FramePixels, _frame_key: &str) -> Result<ClassPrediction> {
        ClassPrediction::new(self.class_id, 1.0)
    }
}

/// Runs a shell template over the temp-file protocol. Calls are serialized
/// unless the command is declared reentrant.
pub struct ExternalCommand {
    template: String,
    lock: Option<Mutex<()>>,
}

pub struct CommandOutput {
    pub stdout: String,
    pub out_path: PathBuf,
    _dir: tempfile::TempDir,
}

impl ExternalCommand {
    pub fn new(template: &str, reentrant: bool) -> Self {
        let template = if template.contains("$IN") || template.contains("${IN}") {
            template.to_string()
        } else {
            format!("{template} \"$IN\" \"$OUT\"")
        };
        ExternalCommand {
            template,
            lock: (!reentrant).then(|| Mutex::new(())),
        }
    }

    pub fn run(&self, frame: &FramePixels, frame_key: &str) -> Result<CommandOutput> {
        let _guard = self.lock.as_ref().map(|m| m.lock().unwrap_or_else(|p| p.into_inner()));
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = dir.path().join("in.png");
        let out_path = dir.path().join("out.png");
        write_frame(&input, frame)?;
        let output = Command::new("sh")
            .arg("-c")
            .arg(&self.template)
            .env("IN", &input)
            .env("OUT", &out_path)
            .env("FRAME_KEY", frame_key)
            .output()
            .map_err(|e| Error::Adapter(format!("cannot spawn sh for {frame_key}: {e}")))?;
        if !output.status.success() {
            return Err(Error::Adapter(format!(
                "command failed for {frame_key} ({}): {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(CommandOutput {
            stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
            out_path,
            _dir: dir,
        })
    }
}

pub struct CommandSegmenter(pub ExternalCommand);

impl Segmenter for CommandSegmenter {
    fn segment(&self, frame: &FramePixels, frame_key: &str) -> Result<BinaryMask> {
        let out = self.0.run(frame, frame_key)?;
        let mask = BinaryMask::read_png(&out.out_path)
            .map_err(|e| Error::Adapter(format!("mask for {frame_key}: {e}")))?;
        check_mask_dims(&mask, frame)?;
        Ok(mask)
    }
}

pub struct CommandClassifier(pub ExternalCommand);

/// Parses the first non-empty line as `class_id confidence`.
pub fn parse_prediction(text: &str) -> Result<ClassPrediction> {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| Error::Adapter("classifier printed nothing".into()))?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    let bad = || Error::Adapter(format!("cannot parse classifier output {line:?}"));
    if fields.len() != 2 {
        return Err(bad());
    }
    let class_id: u16 = fields[0].parse().map_err(|_| bad())?;
    let confidence: f64 = fields[1].parse().map_err(|_| bad())?;
    ClassPrediction::new(class_id, confidence)
}

impl Classifier for CommandClassifier {
    fn classify(&self, crop: &FramePixels, frame_key: &str) -> Result<ClassPrediction> {
        let out = self.0.run(crop, frame_key)?;
        parse_prediction(&out.stdout).map_err(|e| Error::Adapter(format!("{frame_key}: {e}")))
    }
}

pub fn build_segmenter(cfg: &SegmenterConfig, role: SegmenterRole) -> Result<Box<dyn Segmenter>> {
    Ok(match cfg {
        SegmenterConfig::Null => Box::new(NullSegmenter {
            fill: role == SegmenterRole::Product,
        }),
        SegmenterConfig::Manifest { path } => Box::new(ManifestSegmenter::load(path)?),
        SegmenterConfig::ExternalCommand { command, reentrant } => {
            Box::new(CommandSegmenter(ExternalCommand::new(command, *reentrant)))
        }
    })
}

pub fn build_classifier(cfg: &ClassifierConfig) -> Result<Box<dyn Classifier>> {
    cfg.validate()?;
    Ok(match cfg {
        ClassifierConfig::Constant { class_id } => Box::new(ConstantClassifier { class_id: *class_id }),
        ClassifierConfig::Manifest { path, default_class } => Box::new(ManifestClassifier::load(path, *default_class)?),
        ClassifierConfig::ExternalCommand { command, reentrant } => {
            Box::new(CommandClassifier(ExternalCommand::new(command, *reentrant)))
        }
    })
}
