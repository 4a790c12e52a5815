//! Per-frame scalar signals: Otsu threshold, inverse binarization ratio,
//! colorfulness and Sobel sharpness, plus the series they form over a video.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{IngestConfig, Metric};
use crate::error::{Error, Result};
use crate::ingest::{self, FramePixels, FrameSequence};
use crate::numfmt::format_sig;

/// One value per frame of a video, index-aligned with the frames.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSeries {
    pub video_id: String,
    pub frame_rate: f64,
    frame_indices: Vec<u64>,
    values: Vec<f64>,
}

impl SignalSeries {
    pub fn new(
        video_id: impl Into<String>,
        frame_rate: f64,
        frame_indices: Vec<u64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if frame_indices.len() != values.len() {
            return Err(Error::dims(
                format!("{} values", frame_indices.len()),
                format!("{} values", values.len()),
            ));
        }
        if frame_indices.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidArgument(
                "series frame indices must be strictly increasing".into(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite series value at frame {}",
                frame_indices[pos]
            )));
        }
        Ok(SignalSeries {
            video_id: video_id.into(),
            frame_rate,
            frame_indices,
            values,
        })
    }

    /// Series over consecutive indices `0..values.len()`.
    pub fn from_values(video_id: impl Into<String>, frame_rate: f64, values: Vec<f64>) -> Result<Self> {
        let indices = (0..values.len() as u64).collect();
        Self::new(video_id, frame_rate, indices, values)
    }

    /// Same frames and metadata with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(
            self.video_id.clone(),
            self.frame_rate,
            self.frame_indices.clone(),
            values,
        )
    }

    pub fn frame_indices(&self) -> &[u64] {
        &self.frame_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("frame_index,value\n");
        for (i, v) in self.frame_indices.iter().zip(&self.values) {
            out.push_str(&format!("{i},{}\n", format_sig(*v, 9)));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, video_id: impl Into<String>, frame_rate: f64) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct Row {
            frame_index: u64,
            value: f64,
        }
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| Error::csv(path, e))?;
            indices.push(row.frame_index);
            values.push(row.value);
        }
        Self::new(video_id, frame_rate, indices, values)
    }
}

/// Per-pixel boolean raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::dims(
                format!("{} bits", width * height),
                format!("{} bits", bits.len()),
            ));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn dims_string(&self) -> String {
        format!("{}x{}", self.width, self.height)
    }

    /// Gray raster with `maxval` where set and 0 elsewhere.
    pub fn to_frame(&self, maxval: u8) -> FramePixels {
        let samples = self.bits.iter().map(|&b| if b { maxval } else { 0 }).collect();
        FramePixels::gray(self.width, self.height, samples).expect("mask dims are valid")
    }

    /// Any non-zero sample (in any channel) marks the pixel as set.
    pub fn from_frame(frame: &FramePixels) -> Self {
        let bits = frame
            .samples()
            .chunks_exact(frame.channels())
            .map(|p| p.iter().any(|&s| s != 0))
            .collect();
        BinaryMask {
            width: frame.width(),
            height: frame.height(),
            bits,
        }
    }

    pub fn sub_mask(&self, x0: usize, y0: usize, w: usize, h: usize) -> BinaryMask {
        let mut bits = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            bits.extend_from_slice(&self.bits[y * self.width + x0..y * self.width + x0 + w]);
        }
        BinaryMask {
            width: w,
            height: h,
            bits,
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        ingest::write_frame(path, &self.to_frame(255))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        Ok(Self::from_frame(&ingest::read_frame(path)?))
    }
}

/// Histogram of an 8-bit gray raster.
pub(crate) fn histogram(samples: &[u8]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &s in samples {
        hist[s as usize] += 1;
    }
    hist
}

/// Threshold maximizing between-class variance of a 256-bin histogram, with
/// class 0 = levels `<= t`. Ties resolve to the smallest `t`. A histogram
/// with a single occupied level returns that level.
pub(crate) fn otsu_from_histogram(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    let sum_all: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
    let mut w0 = 0u64;
    let mut s0 = 0u64;
    let mut best: Option<(usize, f64)> = None;
    for (t, &count) in hist.iter().enumerate() {
        w0 += count;
        s0 += t as u64 * count;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let s1 = sum_all - s0;
        // w0*w1*(mu0 - mu1)^2 == (w1*s0 - w0*s1)^2 / (w0*w1); numerator exact.
        let num = (i128::from(w1) * i128::from(s0) - i128::from(w0) * i128::from(s1)) as f64;
        let between = num * num / (w0 as f64 * w1 as f64);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t, between));
        }
    }
    match best {
        Some((t, _)) => t as u8,
        None => hist.iter().position(|&c| c > 0).unwrap_or(0) as u8,
    }
}

pub fn otsu_threshold(gray: &FramePixels) -> Result<u8> {
    gray.require_gray("otsu_threshold")?;
    Ok(otsu_from_histogram(&histogram(gray.samples())))
}

/// Inverse binary threshold: `true` (maxval) where `pixel <= thresh`.
pub fn binarize_inverse(gray: &FramePixels, thresh: u8) -> Result<BinaryMask> {
    gray.require_gray("binarize_inverse")?;
    let bits = gray.samples().iter().map(|&s| s <= thresh).collect();
    BinaryMask::new(gray.width(), gray.height(), bits)
}

/// Share of pixels set by inverse Otsu binarization, in [0, 1].
pub fn binarization_ratio(gray: &FramePixels) -> Result<f64> {
    let t = otsu_threshold(gray)?;
    let mask = binarize_inverse(gray, t)?;
    Ok(mask.count_true() as f64 / mask.bits().len() as f64)
}

/// Opponent-channel colorfulness `sigma_rgyb + 0.3 * mu_rgyb`.
///
/// Single pass (Welford), population variance.
pub fn colorfulness(frame: &FramePixels) -> Result<f64> {
    frame.require_rgb("colorfulness")?;
    let mut n = 0.0f64;
    let (mut mean_rg, mut m2_rg) = (0.0f64, 0.0f64);
    let (mut mean_yb, mut m2_yb) = (0.0f64, 0.0f64);
    for p in frame.samples().chunks_exact(3) {
        let (r, g, b) = (f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
        let rg = r - g;
        let yb = 0.5 * (r + g) - b;
        n += 1.0;
        let d = rg - mean_rg;
        mean_rg += d / n;
        m2_rg += d * (rg - mean_rg);
        let d = yb - mean_yb;
        mean_yb += d / n;
        m2_yb += d * (yb - mean_yb);
    }
    let sigma = (m2_rg / n + m2_yb / n).sqrt();
    let mu = (mean_rg * mean_rg + mean_yb * mean_yb).sqrt();
    Ok(sigma + 0.3 * mu)
}

/// Mean 3x3 Sobel gradient magnitude over interior pixels of a real raster.
pub fn sobel_mean_magnitude<T: Copy + Into<f64>>(width: usize, height: usize, px: &[T]) -> Result<f64> {
    if width < 3 || height < 3 {
        return Err(Error::InvalidArgument(format!(
            "sharpness needs at least 3x3 pixels, got {width}x{height}"
        )));
    }
    if px.len() != width * height {
        return Err(Error::dims(width * height, px.len()));
    }
    let at = |x: usize, y: usize| -> f64 { px[y * width + x].into() };
    let mut sum = 0.0;
    for y in 1..height - 1 {
        for x in 1..width - 1 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            sum += (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(sum / ((width - 2) * (height - 2)) as f64)
}

pub fn sharpness(gray: &FramePixels) -> Result<f64> {
    gray.require_gray("sharpness")?;
    sobel_mean_magnitude(gray.width(), gray.height(), gray.samples())
}

/// Evaluates `metric` on an already preprocessed frame.
pub fn metric_value(frame: &FramePixels, metric: Metric) -> Result<f64> {
    match metric {
        Metric::Colorfulness => colorfulness(frame),
        Metric::BinarizationRatio => binarization_ratio(&ingest::to_grayscale(frame)),
        Metric::Sharpness => sharpness(&ingest::to_grayscale(frame)),
    }
}

/// Runs the ingest chain then `metric` on every frame. Frames are processed
/// in parallel; the output keeps the sequence order.
pub fn compute_series(seq: &FrameSequence, metric: Metric, cfg: &IngestConfig) -> Result<SignalSeries> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument("empty frame sequence".into()));
    }
    let values = seq
        .frames()
        .par_iter()
        .map(|(index, frame)| {
            ingest::preprocess(frame, cfg)
                .and_then(|f| metric_value(&f, metric))
                .map_err(|e| e.at_frame(*index))
        })
        .collect::<Result<Vec<f64>>>()?;
    SignalSeries::new(seq.video_id(), seq.frame_rate(), seq.indices().collect(), values)
}

/// Writes a series CSV to any writer; used by the CLI for stdout output.
pub fn write_series_to(series: &SignalSeries, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "frame_index,value")?;
    for (i, v) in series.frame_indices().iter().zip(series.values()) {
        writeln!(w, "{i},{}", format_sig(*v, 9))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(w: usize, h: usize, s: Vec<u8>) -> FramePixels {
        FramePixels::gray(w, h, s).unwrap()
    }

    // Exhaustive oracle: every threshold, class statistics straight from the
    // pixels, textbook w0*w1*(mu0-mu1)^2.
    fn brute_force_otsu(samples: &[u8]) -> u8 {
        let mut best: Option<(u8, f64)> = None;
        for t in 0..=255u8 {
            let (mut w0, mut w1, mut s0, mut s1) = (0.0, 0.0, 0.0, 0.0);
            for &p in samples {
                if p <= t {
                    w0 += 1.0;
                    s0 += f64::from(p);
                } else {
                    w1 += 1.0;
                    s1 += f64::from(p);
                }
            }
            if w0 == 0.0 || w1 == 0.0 {
                continue;
            }
            let v = w0 * w1 * (s0 / w0 - s1 / w1).powi(2);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        best.map(|(t, _)| t).unwrap_or(samples[0])
    }

    #[test]
    fn otsu_two_levels() {
        let mut s = vec![0u8; 32];
        s.extend(vec![255u8; 32]);
        let img = gray(8, 8, s.clone());
        let t = otsu_threshold(&img).unwrap();
        assert_eq!(t, brute_force_otsu(&s));
        assert_eq!(t, 0);
        assert_eq!(binarization_ratio(&img).unwrap(), 0.5);
    }

    #[test]
    fn otsu_constant_returns_value() {
        for v in [0u8, 17, 255] {
            assert_eq!(otsu_threshold(&gray(4, 4, vec![v; 16])).unwrap(), v);
        }
    }

    #[test]
    fn otsu_matches_brute_force_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let s: Vec<u8> = (0..256).map(|_| rng.random()).collect();
            assert_eq!(otsu_threshold(&gray(16, 16, s.clone())).unwrap(), brute_force_otsu(&s));
        }
    }

    #[test]
    fn binarize_examples() {
        let m = binarize_inverse(&gray(2, 1, vec![255, 255]), 128).unwrap();
        assert_eq!(m.count_true(), 0);
        let m = binarize_inverse(&gray(2, 1, vec![0, 0]), 128).unwrap();
        assert_eq!(m.count_true(), 2);
        let m = binarize_inverse(&gray(2, 1, vec![100, 200]), 150).unwrap();
        assert_eq!(m.bits(), &[true, false]);
    }

    #[test]
    fn ratio_of_constant_images_is_one() {
        assert_eq!(binarization_ratio(&gray(3, 3, vec![0; 9])).unwrap(), 1.0);
        assert_eq!(binarization_ratio(&gray(3, 3, vec![255; 9])).unwrap(), 1.0);
    }

    #[test]
    fn colorfulness_hand_values() {
        let g = FramePixels::rgb(2, 1, vec![10, 10, 10, 200, 200, 200]).unwrap();
        assert_eq!(colorfulness(&g).unwrap(), 0.0);
        let red = FramePixels::rgb(3, 2, [255, 0, 0].repeat(6)).unwrap();
        assert!((colorfulness(&red).unwrap() - 85.5296).abs() < 1e-3);
        // rg = 0, yb = (255 + 255) / 2 - 0 = 255
        let yellow = FramePixels::rgb(3, 2, [255, 255, 0].repeat(6)).unwrap();
        assert!((colorfulness(&yellow).unwrap() - 76.5).abs() < 1e-9);
    }

    #[test]
    fn colorfulness_two_pixel_spread() {
        // rg = {255, 0}, yb = {127.5, 0}: sigma = sqrt(127.5^2 + 63.75^2),
        // mu = sqrt(127.5^2 + 63.75^2)
        let f = FramePixels::rgb(2, 1, vec![255, 0, 0, 0, 0, 0]).unwrap();
        let s = (127.5f64.powi(2) + 63.75f64.powi(2)).sqrt();
        assert!((colorfulness(&f).unwrap() - 1.3 * s).abs() < 1e-9);
    }

    #[test]
    fn colorfulness_rejects_gray() {
        assert!(colorfulness(&gray(2, 2, vec![0; 4])).is_err());
    }

    #[test]
    fn sharpness_examples() {
        assert_eq!(sharpness(&gray(5, 5, vec![77; 25])).unwrap(), 0.0);
        // vertical step 0|255 between columns 1 and 2 of a 4x3 image:
        // both interior pixels see |Gx| = 4 * 255.
        let s = [0, 0, 255, 255].repeat(3);
        assert_eq!(sharpness(&gray(4, 3, s)).unwrap(), 1020.0);
        assert!(sharpness(&gray(2, 5, vec![0; 10])).is_err());
    }

    #[test]
    fn sharpness_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<u8> = (0..7 * 5).map(|_| rng.random()).collect();
        let rotated: Vec<u8> = s.iter().rev().copied().collect();
        let a = sharpness(&gray(7, 5, s)).unwrap();
        let b = sharpness(&gray(7, 5, rotated)).unwrap();
        assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn series_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = SignalSeries::new("v", 30.0, vec![1, 2, 5], vec![0.5, 85.529_600_3, 0.0]).unwrap();
        s.write_csv(&path).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "frame_index,value\n1,0.5\n2,85.5296003\n5,0\n"
        );
        assert_eq!(SignalSeries::read_csv(&path, "v", 30.0).unwrap(), s);
    }

    #[test]
    fn series_rejects_nan_and_disorder() {
        assert!(SignalSeries::new("v", 1.0, vec![0, 1], vec![0.0, f64::NAN]).is_err());
        assert!(SignalSeries::new("v", 1.0, vec![1, 1], vec![0.0, 0.0]).is_err());
    }

    fn rgb_strategy() -> impl Strategy<Value = (usize, usize, Vec<u8>)> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), proptest::collection::vec(any::<u8>(), w * h * 3))
        })
    }

    fn two_pass_colorfulness(s: &[u8]) -> f64 {
        let rg: Vec<f64> = s.chunks(3).map(|p| f64::from(p[0]) - f64::from(p[1])).collect();
        let yb: Vec<f64> = s
            .chunks(3)
            .map(|p| 0.5 * (f64::from(p[0]) + f64::from(p[1])) - f64::from(p[2]))
            .collect();
        let n = rg.len() as f64;
        let m_rg = rg.iter().sum::<f64>() / n;
        let m_yb = yb.iter().sum::<f64>() / n;
        let v_rg = rg.iter().map(|v| (v - m_rg).powi(2)).sum::<f64>() / n;
        let v_yb = yb.iter().map(|v| (v - m_yb).powi(2)).sum::<f64>() / n;
        (v_rg + v_yb).sqrt() + 0.3 * (m_rg * m_rg + m_yb * m_yb).sqrt()
    }

    proptest! {
        #[test]
        fn colorfulness_single_pass_matches_two_pass((w, h, s) in rgb_strategy()) {
            let one = colorfulness(&FramePixels::rgb(w, h, s.clone()).unwrap()).unwrap();
            let two = two_pass_colorfulness(&s);
            prop_assert!((one - two).abs() <= 1e-9 * two.abs().max(1e-12));
        }

        #[test]
        fn colorfulness_invariant_under_flips((w, h, s) in rgb_strategy()) {
            let f = FramePixels::rgb(w, h, s.clone()).unwrap();
            let flipped: Vec<u8> = s.chunks(w * 3)
                .flat_map(|row| row.chunks(3).rev().flatten().copied().collect::<Vec<_>>())
                .collect();
            let vflipped: Vec<u8> = s.chunks(w * 3).rev().flatten().copied().collect();
            let transposed: Vec<u8> = (0..w).flat_map(|x| (0..h).flat_map(move |y| {
                let i = (y * w + x) * 3;
                [i, i + 1, i + 2]
            })).map(|i| s[i]).collect();
            let a = colorfulness(&f).unwrap();
            for g in [
                FramePixels::rgb(w, h, flipped).unwrap(),
                FramePixels::rgb(w, h, vflipped).unwrap(),
                FramePixels::rgb(h, w, transposed).unwrap(),
            ] {
                let b = colorfulness(&g).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            }
        }

        #[test]
        fn ratio_complements_plain_binarization(s in proptest::collection::vec(any::<u8>(), 1..200)) {
            let img = gray(s.len(), 1, s.clone());
            let r = binarization_ratio(&img).unwrap();
            let t = otsu_threshold(&img).unwrap();
            let plain = s.iter().filter(|&&p| p > t).count() as f64 / s.len() as f64;
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((r - (1.0 - plain)).abs() < 1e-12);
        }

        #[test]
        fn sharpness_scales_linearly(
            s in proptest::collection::vec(0.0f64..255.0, 36), alpha in 0.01f64..20.0
        ) {
            let base = sobel_mean_magnitude(6, 6, &s).unwrap();
            let scaled: Vec<f64> = s.iter().map(|v| v * alpha).collect();
            let got = sobel_mean_magnitude(6, 6, &scaled).unwrap();
            prop_assert!((got - alpha * base).abs() <= 1e-9 * (alpha * base).max(1.0));
        }
    }
}
