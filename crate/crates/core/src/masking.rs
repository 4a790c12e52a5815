//! Entropy masking, mask composition, contour extraction and contour-based
//! cropping.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{BinarizeMethod, ContourMode, MaskingConfig};
use crate::error::{Error, Result};
use crate::ingest::FramePixels;
use crate::signals::{otsu_from_histogram, BinaryMask};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySpec {
    pub neighborhood_radius: usize,
    pub bins: usize,
    pub binarize_method: BinarizeMethod,
    /// Bits; used with [`BinarizeMethod::Fixed`].
    pub fixed_threshold: f64,
}

impl Default for EntropySpec {
    fn default() -> Self {
        EntropySpec {
            neighborhood_radius: 5,
            bins: 256,
            binarize_method: BinarizeMethod::Otsu,
            fixed_threshold: 0.0,
        }
    }
}

impl From<&MaskingConfig> for EntropySpec {
    fn from(cfg: &MaskingConfig) -> Self {
        EntropySpec {
            neighborhood_radius: cfg.entropy_radius,
            bins: cfg.entropy_bins,
            binarize_method: cfg.binarize,
            fixed_threshold: cfg.fixed_threshold,
        }
    }
}

impl EntropySpec {
    fn validate(&self) -> Result<()> {
        if self.neighborhood_radius == 0 {
            return Err(Error::InvalidArgument("entropy radius must be >= 1".into()));
        }
        if !(2..=256).contains(&self.bins) {
            return Err(Error::InvalidArgument(format!(
                "entropy bins must lie in 2..=256, got {}",
                self.bins
            )));
        }
        Ok(())
    }
}

/// Per-pixel local entropy in bits.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Shannon entropy (base 2) of the intensity histogram in the square window
/// of side `2r + 1` around each pixel, clipped at the borders.
///
/// The window histogram slides along each row; the running sum of
/// `c * log2(c)` over its bins gives `H = log2(n) - sum / n`.
pub fn local_entropy(gray: &FramePixels, spec: &EntropySpec) -> Result<EntropyMap> {
    gray.require_gray("local_entropy")?;
    spec.validate()?;
    let (w, h, r) = (gray.width(), gray.height(), spec.neighborhood_radius);
    let px = gray.samples();
    let bin_of: Vec<usize> = (0..256).map(|v| v * spec.bins / 256).collect();
    let max_count = (2 * r + 1) * (2 * r + 1);
    let clog: Vec<f64> = (0..=max_count)
        .map(|c| if c == 0 { 0.0 } else { c as f64 * (c as f64).log2() })
        .collect();

    let mut values = vec![0.0; w * h];
    let mut hist = vec![0usize; spec.bins];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(h - 1);
        hist.iter_mut().for_each(|c| *c = 0);
        let mut sum = 0.0;
        let mut n = 0usize;
        let add_col = |x: usize, hist: &mut Vec<usize>, sum: &mut f64, n: &mut usize, sign: i8| {
            for yy in y0..=y1 {
                let b = bin_of[px[yy * w + x] as usize];
                let c = hist[b];
                if sign > 0 {
                    *sum += clog[c + 1] - clog[c];
                    hist[b] = c + 1;
                    *n += 1;
                } else {
                    *sum += clog[c - 1] - clog[c];
                    hist[b] = c - 1;
                    *n -= 1;
                }
            }
        };
        for x in 0..=r.min(w - 1) {
            add_col(x, &mut hist, &mut sum, &mut n, 1);
        }
        for x in 0..w {
            if x > 0 {
                if x > r {
                    add_col(x - r - 1, &mut hist, &mut sum, &mut n, -1);
                }
                if x + r < w {
                    add_col(x + r, &mut hist, &mut sum, &mut n, 1);
                }
            }
            let nf = n as f64;
            let e = nf.log2() - sum / nf;
            // the running sum leaves rounding residue on uniform windows
            values[y * w + x] = if e < 1e-9 { 0.0 } else { e };
        }
    }
    Ok(EntropyMap {
        width: w,
        height: h,
        values,
    })
}

/// Binarized entropy map; `true` marks textured pixels.
///
/// Otsu runs on the entropy quantized to 256 levels over `[0, log2(bins)]`.
pub fn entropy_mask(gray: &FramePixels, spec: &EntropySpec) -> Result<BinaryMask> {
    let map = local_entropy(gray, spec)?;
    let bits = match spec.binarize_method {
        BinarizeMethod::Fixed => map.values.iter().map(|&e| e > spec.fixed_threshold).collect(),
        BinarizeMethod::Otsu => {
            let top = (spec.bins as f64).log2();
            let levels: Vec<u8> = map
                .values
                .iter()
                .map(|&e| (e / top * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect();
            let mut hist = [0u64; 256];
            for &l in &levels {
                hist[l as usize] += 1;
            }
            let t = otsu_from_histogram(&hist);
            levels.iter().map(|&l| l > t).collect()
        }
    };
    BinaryMask::new(map.width, map.height, bits)
}

/// `product AND NOT hand AND entropy`, pixelwise.
pub fn combine_masks(product: &BinaryMask, hand: &BinaryMask, entropy: &BinaryMask) -> Result<BinaryMask> {
    for other in [hand, entropy] {
        if other.width() != product.width() || other.height() != product.height() {
            return Err(Error::dims(product.dims_string(), other.dims_string()));
        }
    }
    let bits = product
        .bits()
        .iter()
        .zip(hand.bits())
        .zip(entropy.bits())
        .map(|((&p, &h), &e)| p && !h && e)
        .collect();
    BinaryMask::new(product.width(), product.height(), bits)
}

/// Inclusive pixel bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

/// One 8-connected foreground component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contour {
    /// 1-based, in raster order of each component's first pixel.
    pub region_id: usize,
    pub area: usize,
    pub bbox: BoundingBox,
    /// Clockwise Moore-neighbor trace from the topmost-leftmost pixel.
    pub boundary: Vec<(usize, usize)>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Two-pass 8-connected labeling. Returns per-pixel labels (0 = background,
/// components numbered from 1 in raster order of first appearance) and the
/// component count.
pub fn label_components(mask: &BinaryMask) -> (Vec<usize>, usize) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0usize; w * h];
    let mut parent = vec![0usize];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbors = [0usize; 4];
            let mut k = 0;
            if x > 0 {
                neighbors[k] = labels[y * w + x - 1];
                k += 1;
            }
            if y > 0 {
                if x > 0 {
                    neighbors[k] = labels[(y - 1) * w + x - 1];
                    k += 1;
                }
                neighbors[k] = labels[(y - 1) * w + x];
                k += 1;
                if x + 1 < w {
                    neighbors[k] = labels[(y - 1) * w + x + 1];
                    k += 1;
                }
            }
            let mut current = 0;
            for &l in neighbors[..k].iter().filter(|&&l| l != 0) {
                if current == 0 {
                    current = find(&mut parent, l);
                } else {
                    let (a, b) = (find(&mut parent, current), find(&mut parent, l));
                    if a != b {
                        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                        parent[hi] = lo;
                        current = lo;
                    }
                }
            }
            if current == 0 {
                current = parent.len();
                parent.push(current);
            }
            labels[y * w + x] = current;
        }
    }
    let mut remap = HashMap::new();
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l);
        let next = remap.len() + 1;
        *l = *remap.entry(root).or_insert(next);
    }
    (labels, remap.len())
}

// Clockwise in image coordinates (y down), starting west.
const RING: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn ring_index(from: (usize, usize), to: (i64, i64)) -> usize {
    let d = (to.0 - from.0 as i64, to.1 - from.1 as i64);
    RING.iter().position(|&r| r == d).expect("backtrack is a neighbor")
}

fn trace_boundary(labels: &[usize], w: usize, h: usize, label: usize, start: (usize, usize)) -> Vec<(usize, usize)> {
    let inside = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && labels[y as usize * w + x as usize] == label
    };
    // next boundary pixel clockwise from the backtrack point around `c`
    let step = |c: (usize, usize), back: (i64, i64)| -> Option<((usize, usize), (i64, i64))> {
        let first = ring_index(c, back);
        let mut prev = back;
        for k in 1..=8 {
            let (dx, dy) = RING[(first + k) % 8];
            let p = (c.0 as i64 + dx, c.1 as i64 + dy);
            if inside(p.0, p.1) {
                return Some(((p.0 as usize, p.1 as usize), prev));
            }
            prev = p;
        }
        None
    };

    let start_back = (start.0 as i64 - 1, start.1 as i64);
    let mut boundary = vec![start];
    let Some((second, back)) = step(start, start_back) else {
        return boundary;
    };
    let (mut current, mut back) = (second, back);
    loop {
        let (next, nb) = step(current, back).expect("a traced pixel has a neighbor");
        if current == start && next == second {
            break;
        }
        boundary.push(current);
        current = next;
        back = nb;
    }
    boundary
}

/// Every 8-connected component of `mask`, ordered by its topmost-leftmost
/// pixel in raster order.
pub fn find_contours(mask: &BinaryMask) -> Vec<Contour> {
    let (w, h) = (mask.width(), mask.height());
    let (labels, count) = label_components(mask);
    let mut contours: Vec<Option<Contour>> = vec![None; count];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            match &mut contours[l - 1] {
                slot @ None => {
                    *slot = Some(Contour {
                        region_id: l,
                        area: 1,
                        bbox: BoundingBox { x0: x, y0: y, x1: x, y1: y },
                        boundary: trace_boundary(&labels, w, h, l, (x, y)),
                    })
                }
                Some(c) => {
                    c.area += 1;
                    c.bbox.x0 = c.bbox.x0.min(x);
                    c.bbox.x1 = c.bbox.x1.max(x);
                    c.bbox.y1 = y;
                }
            }
        }
    }
    contours.into_iter().map(|c| c.expect("every label has pixels")).collect()
}

/// `Max`: the largest contour (ties to the smallest region id). `Rms`: every
/// contour strictly larger than the root-mean-square area, falling back to
/// `Max` when none is.
pub fn select_contours(contours: &[Contour], mode: ContourMode) -> Vec<Contour> {
    let largest = || {
        contours
            .iter()
            .max_by(|a, b| a.area.cmp(&b.area).then(b.region_id.cmp(&a.region_id)))
            .cloned()
            .into_iter()
            .collect::<Vec<_>>()
    };
    match mode {
        ContourMode::Max => largest(),
        ContourMode::Rms => {
            if contours.is_empty() {
                return Vec::new();
            }
            let mean_sq = contours.iter().map(|c| (c.area as f64).powi(2)).sum::<f64>() / contours.len() as f64;
            let rms = mean_sq.sqrt();
            let above: Vec<Contour> = contours.iter().filter(|c| c.area as f64 > rms).cloned().collect();
            if above.is_empty() {
                largest()
            } else {
                above
            }
        }
    }
}

/// Bounding box grown by `pad` and clipped to a `width`x`height` frame.
pub fn padded_box(bbox: &BoundingBox, pad: usize, width: usize, height: usize) -> BoundingBox {
    BoundingBox {
        x0: bbox.x0.saturating_sub(pad),
        y0: bbox.y0.saturating_sub(pad),
        x1: (bbox.x1 + pad).min(width - 1),
        y1: (bbox.y1 + pad).min(height - 1),
    }
}

pub fn crop_to_contour(frame: &FramePixels, contour: &Contour, pad: usize) -> Result<FramePixels> {
    let b = &contour.bbox;
    if b.x1 >= frame.width() || b.y1 >= frame.height() {
        return Err(Error::InvalidArgument(format!(
            "contour box ({},{})-({},{}) outside {}x{} frame",
            b.x0,
            b.y0,
            b.x1,
            b.y1,
            frame.width(),
            frame.height()
        )));
    }
    let p = padded_box(b, pad, frame.width(), frame.height());
    frame.sub_image(p.x0, p.y0, p.width(), p.height())
}

pub fn write_contours_csv(path: &Path, contours: &[Contour]) -> Result<()> {
    let mut out = String::from("region_id,area,x0,y0,x1,y1\n");
    for c in contours {
        let b = &c.bbox;
        out.push_str(&format!("{},{},{},{},{},{}\n", c.region_id, c.area, b.x0, b.y0, b.x1, b.y1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
