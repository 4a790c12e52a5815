//! Synthetic checkout sequences with ground truth.
//!
//! A near-white tray sits on a gray surround. Each event moves a textured
//! colored rectangle in from the left, holds it still over the tray, and
//! moves it out to the right. Moving objects are smeared with a horizontal
//! box blur. Ground truth comes from where objects are actually drawn.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::{frame_key, MAX_CLASS, MIN_CLASS};
use crate::error::{Error, Result};
use crate::evaluation::{write_gt_csv, GroundTruthEvent};
use crate::ingest::{roi_rect, write_frame, FramePixels, FrameSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioEvent {
    pub class_id: u16,
    /// When the object starts to enter the frame.
    pub enter_t: f64,
    /// When it has fully left.
    pub exit_t: f64,
    /// Defaults to a hue derived from the class id.
    pub color: Option<[u8; 3]>,
    /// Object size as a share of the frame width and height.
    pub width_fraction: f64,
    pub height_fraction: f64,
    /// Texture block size in pixels.
    pub block_px: usize,
    /// Horizontal speed while entering and leaving.
    pub speed_px_s: f64,
    /// Size oscillation while holding still, as a relative amplitude.
    pub wiggle_amp: f64,
    pub wiggle_hz: f64,
}

impl Default for ScenarioEvent {
    fn default() -> Self {
        ScenarioEvent {
            class_id: 1,
            enter_t: 0.0,
            exit_t: 2.0,
            color: None,
            width_fraction: 0.45,
            height_fraction: 0.55,
            block_px: 5,
            speed_px_s: 680.0,
            wiggle_amp: 0.0,
            wiggle_hz: 0.0,
        }
    }
}

/// A low-saturation blob rising from the bottom edge, standing in for a hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandEvent {
    pub enter_t: f64,
    pub exit_t: f64,
    pub radius_fraction: f64,
}

impl Default for HandEvent {
    fn default() -> Self {
        HandEvent {
            enter_t: 0.0,
            exit_t: 1.0,
            radius_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub video_id: String,
    pub width: usize,
    pub height: usize,
    pub frame_rate: f64,
    pub duration_s: f64,
    pub seed: u64,
    /// Uniform per-channel noise amplitude.
    pub noise: u8,
    /// Longest motion-blur kernel in pixels.
    pub blur_px: usize,
    /// ROI used for ground truth; match the pipeline's ingest setting.
    pub crop_fraction: f64,
    pub tray_color: [u8; 3],
    pub surround_color: [u8; 3],
    /// Tray size as a share of each frame axis.
    pub tray_fraction: f64,
    pub events: Vec<ScenarioEvent>,
    pub hands: Vec<HandEvent>,
}

impl Default for ScenarioSpec {
    /// Five events over 30 s at 30 fps, 480x270.
    fn default() -> Self {
        let classes = [3, 21, 47, 68, 102];
        let events = classes
            .iter()
            .enumerate()
            .map(|(i, &class_id)| ScenarioEvent {
                class_id,
                enter_t: 2.0 + 6.0 * i as f64,
                exit_t: 4.0 + 6.0 * i as f64,
                ..ScenarioEvent::default()
            })
            .collect();
        ScenarioSpec {
            video_id: "synth".into(),
            width: 480,
            height: 270,
            frame_rate: 30.0,
            duration_s: 30.0,
            seed: 7,
            noise: 3,
            blur_px: 15,
            crop_fraction: 0.25,
            tray_color: [238, 236, 232],
            surround_color: [112, 112, 112],
            tray_fraction: 0.85,
            events,
            hands: Vec::new(),
        }
    }
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.frame_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.video_id.is_empty() || self.video_id.contains(['/', '\\']) {
            return bad(format!("video_id {:?} is not a plain name", self.video_id));
        }
        if self.width < 3 || self.height < 3 {
            return bad(format!("frame size {}x{} is too small", self.width, self.height));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite() && self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("frame_rate and duration_s must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.tray_fraction) {
            return bad("tray_fraction must lie in [0, 1]".into());
        }
        if let Err(e) = roi_rect(self.width, self.height, self.crop_fraction) {
            return bad(e.to_string());
        }
        for (i, e) in self.events.iter().enumerate() {
            if !(MIN_CLASS..=MAX_CLASS).contains(&e.class_id) {
                return bad(format!("event {i}: class_id {} outside 1..=116", e.class_id));
            }
            if !(e.enter_t >= 0.0 && e.enter_t < e.exit_t && e.exit_t <= self.duration_s) {
                return bad(format!("event {i}: need 0 <= enter_t < exit_t <= duration_s"));
            }
            if !(e.width_fraction > 0.0 && e.width_fraction <= 1.0 && e.height_fraction > 0.0 && e.height_fraction <= 1.0) {
                return bad(format!("event {i}: size fractions must lie in (0, 1]"));
            }
            if e.block_px == 0 || e.speed_px_s.is_nan() || e.speed_px_s <= 0.0 || !(0.0..1.0).contains(&e.wiggle_amp) || e.wiggle_hz < 0.0 {
                return bad(format!("event {i}: block_px, speed_px_s, wiggle_amp or wiggle_hz out of range"));
            }
            for (j, o) in self.events.iter().enumerate().skip(i + 1) {
                if o.class_id == e.class_id && o.enter_t < e.exit_t && e.enter_t < o.exit_t {
                    return bad(format!("events {i} and {j} of class {} overlap", e.class_id));
                }
            }
        }
        for (i, h) in self.hands.iter().enumerate() {
            if !(h.enter_t >= 0.0 && h.enter_t < h.exit_t && h.exit_t <= self.duration_s && h.radius_fraction > 0.0) {
                return bad(format!("hand {i}: need 0 <= enter_t < exit_t <= duration_s and radius > 0"));
            }
        }
        Ok(())
    }
}

/// Saturated color for a class: hue stepped by the golden ratio.
pub fn class_color(class_id: u16) -> [u8; 3] {
    let h = (class_id as f64 * 0.618_033_988_75).fract() * 6.0;
    let (v, s) = (230.0, 0.85);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [(r + m).round() as u8, (g + m).round() as u8, (b + m).round() as u8]
}

const BLACK: [u8; 3] = [24, 24, 24];
const WHITE: [u8; 3] = [246, 246, 246];
const HAND: [u8; 3] = [168, 156, 146];

struct Texture {
    cols: usize,
    rows: usize,
    blocks: Vec<[u8; 3]>,
}

fn make_texture(spec: &ScenarioSpec, index: usize, event: &ScenarioEvent) -> Texture {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1 << 40 | index as u64);
    let color = event.color.unwrap_or_else(|| class_color(event.class_id));
    let w = (event.width_fraction * spec.width as f64).round().max(1.0) as usize;
    let h = (event.height_fraction * spec.height as f64).round().max(1.0) as usize;
    let cols = w.div_ceil(event.block_px);
    let rows = h.div_ceil(event.block_px);
    let blocks = (0..cols * rows)
        .map(|_| match rng.random_range(0..3) {
            0 => BLACK,
            1 => WHITE,
            _ => color,
        })
        .collect();
    Texture { cols, rows, blocks }
}

/// Where an object is drawn in one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Placement {
    x0: i64,
    y0: i64,
    w: i64,
    h: i64,
    /// Horizontal blur kernel length (1 = sharp).
    blur: usize,
}

impl Placement {
    /// Columns and rows touched once blurred, inclusive.
    fn extent(&self) -> (i64, i64, i64, i64) {
        let a = (self.blur / 2) as i64;
        let b = self.blur as i64 - 1 - a;
        (self.x0 - b, self.y0, self.x0 + self.w - 1 + a, self.y0 + self.h - 1)
    }
}

fn place(spec: &ScenarioSpec, event: &ScenarioEvent, t: f64) -> Option<Placement> {
    if t < event.enter_t || t > event.exit_t {
        return None;
    }
    let (fw, fh) = (spec.width as f64, spec.height as f64);
    let base_w = (event.width_fraction * fw).round().max(1.0);
    let base_h = (event.height_fraction * fh).round().max(1.0);
    let dur = event.exit_t - event.enter_t;
    let travel = fw / 2.0 + base_w / 2.0;
    let transit = (travel / event.speed_px_s).min(dur / 3.0);
    let speed = travel / transit;
    let local = t - event.enter_t;

    let (cx, scale, moving) = if local < transit {
        (-base_w / 2.0 + speed * local, 1.0, true)
    } else if local > dur - transit {
        (fw / 2.0 + speed * (local - (dur - transit)), 1.0, true)
    } else {
        let phase = 2.0 * std::f64::consts::PI * event.wiggle_hz * (local - transit);
        (fw / 2.0, 1.0 + event.wiggle_amp * phase.sin(), false)
    };
    let w = (base_w * scale).round().max(1.0);
    let h = (base_h * scale).round().max(1.0);
    let blur = if moving {
        ((speed / spec.frame_rate).round() as usize).clamp(1, spec.blur_px.max(1))
    } else {
        1
    };
    Some(Placement {
        x0: (cx - w / 2.0).round() as i64,
        y0: (fh / 2.0 - h / 2.0).round() as i64,
        w: w as i64,
        h: h as i64,
        blur,
    })
}

fn visible_area(p: &Placement, roi: (usize, usize, usize, usize)) -> i64 {
    let (ex0, ey0, ex1, ey1) = p.extent();
    let (rx0, ry0, rw, rh) = (roi.0 as i64, roi.1 as i64, roi.2 as i64, roi.3 as i64);
    let w = ex1.min(rx0 + rw - 1) - ex0.max(rx0) + 1;
    let h = ey1.min(ry0 + rh - 1) - ey0.max(ry0) + 1;
    if w > 0 && h > 0 {
        w * h
    } else {
        0
    }
}

fn render(spec: &ScenarioSpec, textures: &[Texture], index: usize) -> FramePixels {
    let (w, h) = (spec.width, spec.height);
    let t = index as f64 / spec.frame_rate;
    let mut px = vec![0u8; w * h * 3];
    let tray_w = (spec.tray_fraction * w as f64).round() as usize;
    let tray_h = (spec.tray_fraction * h as f64).round() as usize;
    let (tx0, ty0) = ((w - tray_w) / 2, (h - tray_h) / 2);
    for y in 0..h {
        for x in 0..w {
            let inside = (tx0..tx0 + tray_w).contains(&x) && (ty0..ty0 + tray_h).contains(&y);
            let c = if inside { spec.tray_color } else { spec.surround_color };
            px[(y * w + x) * 3..][..3].copy_from_slice(&c);
        }
    }

    for (event, tex) in spec.events.iter().zip(textures) {
        let Some(p) = place(spec, event, t) else { continue };
        let bw = p.w as f64 / tex.cols as f64;
        let bh = p.h as f64 / tex.rows as f64;
        for y in p.y0.max(0)..(p.y0 + p.h).min(h as i64) {
            let row = (((y - p.y0) as f64 / bh) as usize).min(tex.rows - 1);
            for x in p.x0.max(0)..(p.x0 + p.w).min(w as i64) {
                let col = (((x - p.x0) as f64 / bw) as usize).min(tex.cols - 1);
                let i = (y as usize * w + x as usize) * 3;
                px[i..i + 3].copy_from_slice(&tex.blocks[row * tex.cols + col]);
            }
        }
        if p.blur > 1 {
            blur_rows(&mut px, w, h, &p);
        }
    }

    for hand in &spec.hands {
        if t < hand.enter_t || t > hand.exit_t {
            continue;
        }
        // rises to mid-height and sinks back
        let u = (t - hand.enter_t) / (hand.exit_t - hand.enter_t);
        let r = hand.radius_fraction * h as f64;
        let cy = h as f64 + r - (1.0 - (2.0 * u - 1.0).abs()) * (h as f64 / 2.0 + r);
        let cx = w as f64 * 0.7;
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx / 0.6 + dy * dy <= r * r {
                    px[(y * w + x) * 3..][..3].copy_from_slice(&HAND);
                }
            }
        }
    }

    if spec.noise > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(index as u64);
        let n = spec.noise as i16;
        for s in px.iter_mut() {
            *s = (*s as i16 + rng.random_range(-n..=n)).clamp(0, 255) as u8;
        }
    }
    FramePixels::rgb(w, h, px).expect("rendered frame has its own dims")
}

fn blur_rows(px: &mut [u8], w: usize, h: usize, p: &Placement) {
    let (ex0, ey0, ex1, ey1) = p.extent();
    let a = (p.blur / 2) as i64;
    let b = p.blur as i64 - 1 - a;
    let (x0, x1) = (ex0.max(0), ex1.min(w as i64 - 1));
    for y in ey0.max(0)..=ey1.min(h as i64 - 1) {
        let row: Vec<u8> = px[y as usize * w * 3..(y as usize + 1) * w * 3].to_vec();
        for x in x0..=x1 {
            for c in 0..3 {
                let mut sum = 0u32;
                let mut n = 0u32;
                for k in -a..=b {
                    let xx = (x + k).clamp(0, w as i64 - 1) as usize;
                    sum += row[xx * 3 + c] as u32;
                    n += 1;
                }
                px[(y as usize * w + x as usize) * 3 + c] = ((sum + n / 2) / n) as u8;
            }
        }
    }
}

pub struct SynthOutput {
    pub sequence: FrameSequence,
    pub ground_truth: Vec<GroundTruthEvent>,
    /// Frame key to the class of the object most visible in the ROI.
    pub labels: BTreeMap<String, u16>,
}

/// Renders every frame and derives ground truth from object placement.
pub fn generate(spec: &ScenarioSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let textures: Vec<Texture> = spec
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| make_texture(spec, i, e))
        .collect();
    let n = spec.frame_count();
    let frames: Vec<(u64, FramePixels)> = (0..n)
        .into_par_iter()
        .map(|i| (i as u64, render(spec, &textures, i)))
        .collect();

    let roi = roi_rect(spec.width, spec.height, spec.crop_fraction)?;
    let mut ground_truth = Vec::new();
    let mut best: Vec<Option<(i64, u16)>> = vec![None; n];
    for event in &spec.events {
        let mut first = None;
        let mut last = None;
        for (i, slot) in best.iter_mut().enumerate() {
            let t = i as f64 / spec.frame_rate;
            let area = place(spec, event, t).map_or(0, |p| visible_area(&p, roi));
            if area > 0 {
                first.get_or_insert(i);
                last = Some(i);
                if slot.is_none_or(|(a, _)| area > a) {
                    *slot = Some((area, event.class_id));
                }
            }
        }
        if let (Some(a), Some(b)) = (first, last) {
            ground_truth.push(GroundTruthEvent {
                video_id: spec.video_id.clone(),
                class_id: event.class_id,
                t_start: a as f64 / spec.frame_rate,
                t_end: b as f64 / spec.frame_rate,
            });
        }
    }
    ground_truth.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    let labels = best
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|(_, c)| (frame_key(&spec.video_id, i as u64), c)))
        .collect();
    let sequence = FrameSequence::new(spec.video_id.clone(), spec.frame_rate, frames)?;
    Ok(SynthOutput {
        sequence,
        ground_truth,
        labels,
    })
}

/// Files written by [`write_output`].
pub struct SynthFiles {
    pub frame_dir: PathBuf,
    pub gt_csv: PathBuf,
    pub labels_csv: PathBuf,
    pub scenario_toml: PathBuf,
}

/// `<out>/<video_id>/NNNNNN.png`, `<out>/gt.csv`, `<out>/labels.csv`
/// (a classifier manifest) and `<out>/scenario.toml`.
pub fn write_output(spec: &ScenarioSpec, out: &SynthOutput, dir: &Path) -> Result<SynthFiles> {
    let frame_dir = dir.join(&spec.video_id);
    std::fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
    out.sequence
        .frames()
        .par_iter()
        .map(|(i, f)| write_frame(&frame_dir.join(format!("{i:06}.png")), f))
        .collect::<Result<()>>()?;
    let gt_csv = dir.join("gt.csv");
    write_gt_csv(&gt_csv, &out.ground_truth)?;
    let labels_csv = dir.join("labels.csv");
    let mut text = String::from("frame_key,path_or_class\n");
    for (k, c) in &out.labels {
        text.push_str(&format!("{k},{c}\n"));
    }
    std::fs::write(&labels_csv, text).map_err(|e| Error::io(&labels_csv, e))?;
    let scenario_toml = dir.join("scenario.toml");
    std::fs::write(&scenario_toml, spec.to_toml_string()).map_err(|e| Error::io(&scenario_toml, e))?;
    Ok(SynthFiles {
        frame_dir,
        gt_csv,
        labels_csv,
        scenario_toml,
    })
}
