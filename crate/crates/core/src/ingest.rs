//! Frame loading and the pre-signal transforms: ROI crop, brightness/contrast,
//! bilinear resize and grayscale conversion.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use rayon::prelude::*;

use crate::config::IngestConfig;
use crate::error::{Error, Result};

/// Rounds half away from zero and saturates to the 8-bit range.
#[inline]
pub(crate) fn saturate_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// An 8-bit raster, row-major, with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FramePixels {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl FramePixels {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "frames have 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width * height * channels;
        if samples.len() != expected {
            return Err(Error::dims(
                format!("{expected} samples"),
                format!("{} samples", samples.len()),
            ));
        }
        Ok(FramePixels {
            width,
            height,
            channels,
            samples,
        })
    }

    /// A frame where every sample equals `value`.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn gray(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, samples)
    }

    pub fn rgb(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Samples of the pixel at (x, y); one element for gray, three for RGB.
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let start = (y * self.width + x) * self.channels;
        &self.samples[start..start + self.channels]
    }

    pub fn dims_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub fn same_shape(&self, other: &FramePixels) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn require_gray(&self, op: &str) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::InvalidArgument(format!(
                "{op} needs a single-channel frame, got {} channels",
                self.channels
            )));
        }
        Ok(())
    }

    pub(crate) fn require_rgb(&self, op: &str) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "{op} needs an RGB frame, got {} channels",
                self.channels
            )));
        }
        Ok(())
    }

    /// Copies the `w`x`h` window whose top-left corner is (x0, y0).
    pub fn sub_image(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<FramePixels> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "window {w}x{h}+{x0}+{y0} outside {}x{} frame",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut out = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            out.extend_from_slice(&self.samples[start..start + w * c]);
        }
        FramePixels::new(w, h, c, out)
    }
}

/// An ordered run of frames from one video.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    video_id: String,
    frame_rate: f64,
    frames: Vec<(u64, FramePixels)>,
}

impl FrameSequence {
    pub fn new(
        video_id: impl Into<String>,
        frame_rate: f64,
        frames: Vec<(u64, FramePixels)>,
    ) -> Result<Self> {
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frame rate must be positive, got {frame_rate}"
            )));
        }
        for pair in frames.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidArgument(format!(
                    "frame indices must be strictly increasing ({} then {})",
                    pair[0].0, pair[1].0
                )));
            }
            if !pair[1].1.same_shape(&pair[0].1) {
                return Err(Error::dims(pair[0].1.dims_string(), pair[1].1.dims_string())
                    .at_frame(pair[1].0));
            }
        }
        Ok(FrameSequence {
            video_id: video_id.into(),
            frame_rate,
            frames,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn frames(&self) -> &[(u64, FramePixels)] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.frames.iter().map(|(i, _)| *i)
    }

    /// Position of `frame_index` within the sequence.
    pub fn position_of(&self, frame_index: u64) -> Option<usize> {
        self.frames
            .binary_search_by_key(&frame_index, |(i, _)| *i)
            .ok()
    }

    pub fn get(&self, frame_index: u64) -> Option<&FramePixels> {
        self.position_of(frame_index).map(|p| &self.frames[p].1)
    }
}

fn frame_index_from_name(path: &Path) -> Option<u64> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !matches!(ext.as_str(), "png" | "ppm" | "pgm") {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

/// Loads every `%06d.(png|ppm)` frame in `dir`, ordered by the numeric name.
///
/// Files that do not follow the naming pattern are ignored. The video id is
/// the directory name.
pub fn load_frame_dir(dir: &Path, frame_rate: f64) -> Result<FrameSequence> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut named: Vec<(u64, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        if let Some(index) = frame_index_from_name(&path) {
            named.push((index, path));
        }
    }
    if named.is_empty() {
        return Err(Error::NoFrames(dir.to_path_buf()));
    }
    named.sort();
    if let Some(pair) = named.windows(2).find(|p| p[0].0 == p[1].0) {
        return Err(Error::InvalidArgument(format!(
            "duplicate frame index {} ({} and {})",
            pair[0].0,
            pair[0].1.display(),
            pair[1].1.display()
        )));
    }

    let frames = named
        .par_iter()
        .map(|(index, path)| read_frame(path).map(|f| (*index, f)))
        .collect::<Result<Vec<_>>>()?;

    let first = &frames[0].1;
    if let Some((index, f)) = frames.iter().find(|(_, f)| !f.same_shape(first)) {
        return Err(Error::dims(first.dims_string(), f.dims_string()).at_frame(*index));
    }

    let video_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("video")
        .to_string();
    FrameSequence::new(video_id, frame_rate, frames)
}

/// Decodes a PNG or binary PNM file. Gray inputs stay single-channel; anything
/// else is converted to 8-bit RGB.
pub fn read_frame(path: &Path) -> Result<FramePixels> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    from_dynamic(img)
}

pub(crate) fn from_dynamic(img: DynamicImage) -> Result<FramePixels> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        FramePixels::rgb(w, h, img.into_rgb8().into_raw())
    } else {
        FramePixels::gray(w, h, img.into_luma8().into_raw())
    }
}

/// Encodes by extension: `.png` as PNG, `.ppm`/`.pgm` as binary P6 or P5.
pub fn write_frame(path: &Path, frame: &FramePixels) -> Result<()> {
    let color = if frame.channels == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let image_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    match ext.as_str() {
        "ppm" | "pgm" => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let subtype = if frame.channels == 1 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(BufWriter::new(file))
                .with_subtype(subtype)
                .write_image(
                    &frame.samples,
                    frame.width as u32,
                    frame.height as u32,
                    color,
                )
                .map_err(image_err)
        }
        _ => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Fast, FilterType::Adaptive)
                .write_image(
                    &frame.samples,
                    frame.width as u32,
                    frame.height as u32,
                    color,
                )
                .map_err(image_err)
        }
    }
}

/// Pixel rectangle retained by a centered crop: (x0, y0, width, height).
pub fn roi_rect(width: usize, height: usize, crop_fraction: f64) -> Result<(usize, usize, usize, usize)> {
    if !(0.0..1.0).contains(&crop_fraction) {
        return Err(Error::InvalidArgument(format!(
            "crop fraction must lie in [0, 1), got {crop_fraction}"
        )));
    }
    let keep = 1.0 - crop_fraction;
    let w = (width as f64 * keep).floor() as usize;
    let h = (height as f64 * keep).floor() as usize;
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!(
            "crop fraction {crop_fraction} leaves an empty {w}x{h} region of a {width}x{height} frame"
        )));
    }
    let x0 = (width as f64 * crop_fraction / 2.0).floor() as usize;
    let y0 = (height as f64 * crop_fraction / 2.0).floor() as usize;
    Ok((x0, y0, w, h))
}

/// Keeps the centered `(1 - crop_fraction)` share of each axis.
pub fn crop_roi(frame: &FramePixels, crop_fraction: f64) -> Result<FramePixels> {
    let (x0, y0, w, h) = roi_rect(frame.width, frame.height, crop_fraction)?;
    if (x0, y0, w, h) == (0, 0, frame.width, frame.height) {
        return Ok(frame.clone());
    }
    frame.sub_image(x0, y0, w, h)
}

/// Linear point transform `gain * s + bias`, rounded and clamped.
pub fn adjust_brightness_contrast(frame: &FramePixels, gain: f64, bias: f64) -> Result<FramePixels> {
    if !(gain.is_finite() && gain > 0.0) || !bias.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "brightness/contrast needs gain > 0 and finite bias, got gain={gain} bias={bias}"
        )));
    }
    let lut: Vec<u8> = (0..=255u16)
        .map(|s| saturate_u8(gain * f64::from(s) + bias))
        .collect();
    let samples = frame.samples.iter().map(|&s| lut[s as usize]).collect();
    FramePixels::new(frame.width, frame.height, frame.channels, samples)
}

// Source coordinate of each output sample with corner pixel centers aligned.
fn sample_positions(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            let src = if output == 1 {
                (input - 1) as f64 / 2.0
            } else {
                o as f64 * (input - 1) as f64 / (output - 1) as f64
            };
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize; the centers of the corner pixels map onto each other.
pub fn resize_bilinear(frame: &FramePixels, out_w: usize, out_h: usize) -> Result<FramePixels> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    if out_w == frame.width && out_h == frame.height {
        return Ok(frame.clone());
    }
    let c = frame.channels;
    let xs = sample_positions(frame.width, out_w);
    let ys = sample_positions(frame.height, out_h);
    let stride = frame.width * c;
    let src = &frame.samples;
    let mut out = Vec::with_capacity(out_w * out_h * c);
    for &(y0, y1, fy) in &ys {
        let row0 = &src[y0 * stride..(y0 + 1) * stride];
        let row1 = &src[y1 * stride..(y1 + 1) * stride];
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let p00 = f64::from(row0[x0 * c + ch]);
                let p01 = f64::from(row0[x1 * c + ch]);
                let p10 = f64::from(row1[x0 * c + ch]);
                let p11 = f64::from(row1[x1 * c + ch]);
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                out.push(saturate_u8(top + (bottom - top) * fy));
            }
        }
    }
    FramePixels::new(out_w, out_h, c, out)
}

/// BT.601 luma. Single-channel frames are returned unchanged.
pub fn to_grayscale(frame: &FramePixels) -> FramePixels {
    if frame.channels == 1 {
        return frame.clone();
    }
    let samples = frame
        .samples
        .chunks_exact(3)
        .map(|p| {
            saturate_u8(
                0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]),
            )
        })
        .collect();
    FramePixels {
        width: frame.width,
        height: frame.height,
        channels: 1,
        samples,
    }
}

/// The full pre-signal chain: ROI crop, brightness/contrast, resize.
pub fn preprocess(frame: &FramePixels, cfg: &IngestConfig) -> Result<FramePixels> {
    let roi = crop_roi(frame, cfg.crop_fraction)?;
    let adjusted = adjust_brightness_contrast(&roi, cfg.gain, cfg.bias)?;
    resize_bilinear(&adjusted, cfg.resize_width, cfg.resize_height)
}
