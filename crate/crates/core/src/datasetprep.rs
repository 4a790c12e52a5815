//! Gradient background replacement for training images.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, FramePixels};
use crate::signals::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GradientShape {
    Rectangular,
    Circular,
}

impl GradientShape {
    pub fn name(self) -> &'static str {
        match self {
            GradientShape::Rectangular => "rectangular",
            GradientShape::Circular => "circular",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientSpec {
    pub shape: GradientShape,
    pub inner_color: [u8; 3],
    pub outer_color: [u8; 3],
    /// Pixel coordinates; `None` is the image center.
    pub center: Option<(f64, f64)>,
}

/// `inner * ratio + outer * (1 - ratio)` with `ratio = 1 - d`, where `d` is
/// the distance from the center normalized so it reaches 1 at the farthest
/// corner (circular) or at the frame edge on each axis (rectangular).
pub fn gradient_background(width: usize, height: usize, spec: &GradientSpec) -> Result<FramePixels> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("gradient size {width}x{height}")));
    }
    let (cx, cy) = spec
        .center
        .unwrap_or(((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0));
    let (wm, hm) = (width as f64 - 1.0, height as f64 - 1.0);
    let hx = cx.max(wm - cx);
    let hy = cy.max(hm - cy);
    let corner = hx.hypot(hy);
    let axis = |delta: f64, half: f64| if half > 0.0 { delta.abs() / half } else { 0.0 };

    let mut samples = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let d = match spec.shape {
                GradientShape::Circular => {
                    if corner > 0.0 {
                        dx.hypot(dy) / corner
                    } else {
                        0.0
                    }
                }
                GradientShape::Rectangular => axis(dx, hx).max(axis(dy, hy)),
            };
            let ratio = (1.0 - d).clamp(0.0, 1.0);
            for c in 0..3 {
                let v = spec.inner_color[c] as f64 * ratio + spec.outer_color[c] as f64 * (1.0 - ratio);
                samples.push(ingest::saturate_u8(v));
            }
        }
    }
    FramePixels::rgb(width, height, samples)
}

/// Object where the mask is set, background elsewhere.
pub fn composite(object: &FramePixels, mask: &BinaryMask, background: &FramePixels) -> Result<FramePixels> {
    object.require_rgb("composite")?;
    background.require_rgb("composite")?;
    if !object.same_shape(background) {
        return Err(Error::dims(object.dims_string(), background.dims_string()));
    }
    if mask.width() != object.width() || mask.height() != object.height() {
        return Err(Error::dims(object.dims_string(), mask.dims_string()));
    }
    let samples = object
        .samples()
        .chunks_exact(3)
        .zip(background.samples().chunks_exact(3))
        .zip(mask.bits())
        .flat_map(|((o, b), &m)| if m { o } else { b }.to_vec())
        .collect();
    FramePixels::rgb(object.width(), object.height(), samples)
}

/// Inclusive per-channel bounds for randomly drawn colors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorRange {
    pub min: u8,
    pub max: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepOptions {
    /// Fixed shape, or a coin flip per image.
    pub shape: Option<GradientShape>,
    pub inner: ColorRange,
    pub outer: ColorRange,
    pub seed: u64,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            shape: None,
            inner: ColorRange { min: 200, max: 255 },
            outer: ColorRange { min: 0, max: 255 },
            seed: 0,
        }
    }
}

/// Draws a spec from the per-image generator.
pub fn random_spec(opts: &PrepOptions, seed: u64) -> Result<GradientSpec> {
    for r in [opts.inner, opts.outer] {
        if r.min > r.max {
            return Err(Error::InvalidArgument(format!("color range {}..={} is empty", r.min, r.max)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = opts.shape.unwrap_or(if rng.random_bool(0.5) {
        GradientShape::Rectangular
    } else {
        GradientShape::Circular
    });
    let mut color = |r: ColorRange| -> [u8; 3] { std::array::from_fn(|_| rng.random_range(r.min..=r.max)) };
    let inner_color = color(opts.inner);
    let outer_color = color(opts.outer);
    Ok(GradientSpec {
        shape,
        inner_color,
        outer_color,
        center: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepRecord {
    pub input: PathBuf,
    pub output: PathBuf,
    pub shape: GradientShape,
    pub inner_rgb: String,
    pub outer_rgb: String,
    pub seed: u64,
}

fn hex_rgb(c: [u8; 3]) -> String {
    format!("#{}", hex::encode(c))
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pgm")
    )
}

/// Replaces the background of every image under `input_dir`. The mask for
/// `input_dir/a/b.png` is `mask_dir/a/b.png`; output goes to
/// `output_dir/a/b.png`. Image `i` in sorted path order uses seed
/// `opts.seed + i`.
pub fn prep_background_dir(
    input_dir: &Path,
    mask_dir: &Path,
    output_dir: &Path,
    opts: &PrepOptions,
) -> Result<Vec<PrepRecord>> {
    let mut inputs = Vec::new();
    for entry in walkdir::WalkDir::new(input_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(input_dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() && is_image(entry.path()) {
            inputs.push(entry.into_path());
        }
    }
    if inputs.is_empty() {
        return Err(Error::NoFrames(input_dir.to_path_buf()));
    }

    inputs
        .par_iter()
        .enumerate()
        .map(|(i, input)| {
            let rel = input.strip_prefix(input_dir).expect("walked under input_dir");
            let mask_path = mask_dir.join(rel).with_extension("png");
            let output = output_dir.join(rel).with_extension("png");
            let object = ingest::read_frame(input)?;
            let object = if object.channels() == 1 {
                gray_to_rgb(&object)
            } else {
                object
            };
            let mask = BinaryMask::read_png(&mask_path)?;
            let seed = opts.seed.wrapping_add(i as u64);
            let spec = random_spec(opts, seed)?;
            let bg = gradient_background(object.width(), object.height(), &spec)?;
            let out = composite(&object, &mask, &bg)?;
            if let Some(parent) = output.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            ingest::write_frame(&output, &out)?;
            Ok(PrepRecord {
                input: input.clone(),
                output,
                shape: spec.shape,
                inner_rgb: hex_rgb(spec.inner_color),
                outer_rgb: hex_rgb(spec.outer_color),
                seed,
            })
        })
        .collect()
}

fn gray_to_rgb(frame: &FramePixels) -> FramePixels {
    let samples = frame.samples().iter().flat_map(|&v| [v, v, v]).collect();
    FramePixels::rgb(frame.width(), frame.height(), samples).expect("same dims")
}

pub fn write_prep_manifest(path: &Path, records: &[PrepRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in records {
        writer.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
