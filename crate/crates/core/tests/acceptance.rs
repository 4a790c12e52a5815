//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use framesift::adapters::{build_segmenter, ManifestClassifier, SegmenterConfig, SegmenterRole};
use framesift::datasetprep::{gradient_background, GradientShape, GradientSpec};
use framesift::detect::{self, Adapters, Detection};
use framesift::evaluation::{self, GroundTruthEvent, MacroOptions};
use framesift::masking::{self, EntropySpec};
use framesift::selection::cbt_metric;
use framesift::signals::{colorfulness, otsu_threshold};
use framesift::smoothing::{fft_lowpass, savgol_smooth};
use framesift::synthgen::{self, ScenarioEvent, ScenarioSpec};
use framesift::{BinaryMask, FramePixels, PipelineConfig, SignalSeries};

type Outcome = Result<String, String>;
/// Name, runtime budget in seconds, and the check itself.
type Criterion = (&'static str, Option<f64>, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn uniform_rgb(rgb: [u8; 3]) -> FramePixels {
    let (w, h) = (64, 48);
    FramePixels::rgb(w, h, rgb.repeat(w * h)).unwrap()
}

fn criterion_1() -> Outcome {
    let gray = colorfulness(&uniform_rgb([128, 128, 128])).map_err(err)?;
    let red = colorfulness(&uniform_rgb([255, 0, 0])).map_err(err)?;
    let yellow = colorfulness(&uniform_rgb([255, 255, 0])).map_err(err)?;
    let summary = format!("gray={gray} red={red:.4} yellow={yellow:.4}");
    check(gray == 0.0, || format!("gray should be exactly 0; {summary}"))?;
    check((red - 85.5296).abs() <= 1e-3, || format!("red should be 85.5296; {summary}"))?;
    check((yellow - 38.25).abs() <= 1e-3, || format!("yellow should be 38.25; {summary}"))?;
    Ok(summary)
}

/// Exhaustive between-class variance argmax, compared as exact fractions
/// `(n1*s0 - n0*s1)^2 / (n0*n1)`. Ties go to the smallest threshold.
fn otsu_oracle(px: &[u8]) -> u8 {
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 0..=255u8 {
        let (mut n0, mut s0, mut n1, mut s1) = (0u128, 0u128, 0u128, 0u128);
        for &p in px {
            if p <= t {
                n0 += 1;
                s0 += u128::from(p);
            } else {
                n1 += 1;
                s1 += u128::from(p);
            }
        }
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (n1 * s0).abs_diff(n0 * s1);
        let (num, den) = (diff * diff, n0 * n1);
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t, num, den));
        }
    }
    best.map_or(px[0], |(t, _, _)| t)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..50 {
        let px: Vec<u8> = (0..256).map(|_| rng.random()).collect();
        let got = otsu_threshold(&FramePixels::gray(16, 16, px.clone()).unwrap()).map_err(err)?;
        let want = otsu_oracle(&px);
        check(got == want, || format!("image {k}: otsu {got}, oracle {want}"))?;
    }
    Ok("50/50 images agree".into())
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 121;
    let mut worst = 0.0f64;
    for (window, polyorder) in [(31, 3), (11, 2), (7, 4)] {
        for degree in 0..=polyorder {
            for _ in 0..20 {
                let coeffs: Vec<f64> = (0..=degree).map(|_| rng.random_range(-1.0..1.0)).collect();
                let values: Vec<f64> = (0..n)
                    .map(|i| {
                        let t = (i as f64 - 60.0) / 60.0;
                        coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
                    })
                    .collect();
                let s = SignalSeries::from_values("p", 30.0, values.clone()).map_err(err)?;
                let out = savgol_smooth(&s, window, polyorder).map_err(err)?;
                let e = out.values().iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(e);
                check(e <= 1e-9, || format!("window {window} polyorder {polyorder} degree {degree}: error {e:e}"))?;
            }
        }
    }
    Ok(format!("max abs error {worst:.1e}"))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 300;
    let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let s = SignalSeries::from_values("f", 30.0, noise.clone()).map_err(err)?;

    let ident = fft_lowpass(&s, 1.0).map_err(err)?;
    let e_ident = max_diff(ident.values(), &noise);
    check(e_ident <= 1e-9, || format!("keep_fraction 1 error {e_ident:e}"))?;

    // cutoff bin is ceil(0.05 * 300 / 2) = 8; bins 3 and 5 lie below it
    let tau = std::f64::consts::TAU;
    let wave: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 / n as f64;
            2.0 + (tau * 3.0 * x).sin() + 0.5 * (tau * 5.0 * x).cos()
        })
        .collect();
    let ws = SignalSeries::from_values("f", 30.0, wave.clone()).map_err(err)?;
    let e_wave = max_diff(fft_lowpass(&ws, 0.05).map_err(err)?.values(), &wave);
    check(e_wave <= 1e-6, || format!("sub-cutoff sinusoid error {e_wave:e}"))?;

    let once = fft_lowpass(&s, 0.05).map_err(err)?;
    let twice = fft_lowpass(&once, 0.05).map_err(err)?;
    let e_idem = max_diff(once.values(), twice.values());
    check(e_idem <= 1e-9, || format!("idempotence error {e_idem:e}"))?;
    Ok(format!("identity {e_ident:.1e}, sinusoid {e_wave:.1e}, idempotence {e_idem:.1e}"))
}

/// BFS 8-connected flood fill; component areas in raster order of seeds.
fn flood_fill_areas(bits: &[bool], w: usize, h: usize) -> Vec<usize> {
    let mut seen = vec![false; w * h];
    let mut areas = Vec::new();
    for start in 0..w * h {
        if !bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut area = 0;
        while let Some(p) = queue.pop_front() {
            area += 1;
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if bits[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        areas.push(area);
    }
    areas
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut total = 0;
    for k in 0..100 {
        let density = rng.random_range(0.2..0.7);
        let bits: Vec<bool> = (0..32 * 32).map(|_| rng.random_bool(density)).collect();
        let mask = BinaryMask::new(32, 32, bits.clone()).map_err(err)?;
        let contours = masking::find_contours(&mask);
        let got: Vec<usize> = contours.iter().map(|c| c.area).collect();
        let want = flood_fill_areas(&bits, 32, 32);
        check(got == want, || format!("mask {k}: areas {got:?}, oracle {want:?}"))?;
        let sum: usize = got.iter().sum();
        check(sum == mask.count_true(), || format!("mask {k}: area sum {sum} != {}", mask.count_true()))?;
        total += got.len();
    }
    Ok(format!("100 masks, {total} components"))
}

fn criterion_6() -> Outcome {
    let spec = EntropySpec::default();
    let flat = FramePixels::filled(64, 48, 1, 137).unwrap();
    let empty = masking::entropy_mask(&flat, &spec).map_err(err)?;
    check(empty.count_true() == 0, || format!("constant image gave {} true pixels", empty.count_true()))?;

    let (w, h, half) = (256, 96, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let px: Vec<u8> = (0..w * h)
        .map(|i| if i % w < half { rng.random() } else { 128 })
        .collect();
    let mask = masking::entropy_mask(&FramePixels::gray(w, h, px).unwrap(), &spec).map_err(err)?;
    let r = spec.neighborhood_radius;
    let (mut noise_true, mut noise_n, mut flat_true, mut flat_n) = (0, 0, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if x < half {
                // interior: the neighborhood stays inside the noise half and the image
                if x >= r && x + r < half && y >= r && y + r < h {
                    noise_n += 1;
                    noise_true += usize::from(mask.get(x, y));
                }
            } else {
                flat_n += 1;
                flat_true += usize::from(mask.get(x, y));
            }
        }
    }
    let noise_share = noise_true as f64 / noise_n as f64;
    let flat_share = flat_true as f64 / flat_n as f64;
    let summary = format!("noise interior {:.1}% true, flat {:.1}% true", noise_share * 100.0, flat_share * 100.0);
    check(noise_share >= 0.95 && flat_share <= 0.05, || summary.clone())?;
    Ok(summary)
}

fn det(class_id: u16, t: f64) -> Detection {
    Detection {
        video_id: "v".into(),
        class_id,
        frame_index: (t * 30.0).round() as u64,
        time_s: t,
    }
}

fn criterion_7() -> Outcome {
    let grid: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
    for &b in &grid {
        check(cbt_metric(0.0, b).map_err(err)? == 0.0, || format!("cbt(0, {b}) != 0"))?;
    }
    check(cbt_metric(1.0, 1.0).map_err(err)? == 1.0, || "cbt(1, 1) != 1".into())?;
    let cs: Vec<f64> = grid.iter().map(|g| g * 120.0).collect();
    let values: Vec<Vec<f64>> = cs
        .iter()
        .map(|&c| grid.iter().map(|&b| cbt_metric(c, b)).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()
        .map_err(err)?;
    for i in 0..10 {
        for j in 0..10 {
            if i + 1 < 10 {
                check(values[i + 1][j] >= values[i][j], || format!("not monotone in c at ({i},{j})"))?;
            }
            if j + 1 < 10 {
                check(values[i][j + 1] >= values[i][j], || format!("not monotone in b at ({i},{j})"))?;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..100 {
        let mut ds: Vec<Detection> = (0..rng.random_range(0..15))
            .map(|_| det(rng.random_range(1..4), f64::from(rng.random_range(0..40u32)) * 0.25))
            .collect();
        ds.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        let once = detect::dedupe(&ds, 1.0);
        check(detect::dedupe(&once, 1.0) == once, || format!("list {k}: dedupe not idempotent"))?;
    }
    let traced = detect::dedupe(&[det(5, 0.0), det(5, 0.9), det(5, 1.8)], 1.0);
    let times: Vec<f64> = traced.iter().map(|d| d.time_s).collect();
    check(times == [0.0, 1.8], || format!("anchoring example kept {times:?}"))?;
    Ok("cbt grid monotone, dedupe idempotent, anchoring kept [0, 1.8]".into())
}

/// Largest number of detections that can be paired with distinct events
/// whose window contains them, by exhaustive search.
fn max_matching(times: &[f64], events: &[(f64, f64)], used: &mut Vec<bool>) -> usize {
    let Some((&t, rest)) = times.split_first() else {
        return 0;
    };
    let mut best = max_matching(rest, events, used);
    for (j, &(a, b)) in events.iter().enumerate() {
        if !used[j] && a <= t && t <= b {
            used[j] = true;
            best = best.max(1 + max_matching(rest, events, used));
            used[j] = false;
        }
    }
    best
}

fn oracle_macro_f1(dets: &[Detection], gt: &[GroundTruthEvent]) -> f64 {
    let classes: BTreeSet<u16> = dets.iter().map(|d| d.class_id).chain(gt.iter().map(|e| e.class_id)).collect();
    let videos: BTreeSet<&str> = dets.iter().map(|d| d.video_id.as_str()).chain(gt.iter().map(|e| e.video_id.as_str())).collect();
    let mut sum = 0.0;
    for &c in &classes {
        let mut tp = 0;
        for v in &videos {
            let times: Vec<f64> = dets.iter().filter(|d| d.class_id == c && d.video_id == *v).map(|d| d.time_s).collect();
            let events: Vec<(f64, f64)> = gt
                .iter()
                .filter(|e| e.class_id == c && e.video_id == *v)
                .map(|e| (e.t_start, e.t_end))
                .collect();
            tp += max_matching(&times, &events, &mut vec![false; events.len()]);
        }
        let n_det = dets.iter().filter(|d| d.class_id == c).count();
        let n_gt = gt.iter().filter(|e| e.class_id == c).count();
        let (fp, fn_) = (n_det - tp, n_gt - tp);
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        sum += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    sum / classes.len() as f64
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruthEvent>) {
    let n_classes = rng.random_range(1..=5);
    let classes: Vec<u16> = (0..n_classes).map(|_| rng.random_range(1..=116)).collect();
    let videos = ["a", "b"];
    let mut gt = Vec::new();
    for &c in &classes {
        for _ in 0..rng.random_range(0..=6) {
            let start = f64::from(rng.random_range(0..40u32)) * 0.5;
            let len = f64::from(rng.random_range(0..6u32)) * 0.5;
            gt.push(GroundTruthEvent {
                video_id: videos[rng.random_range(0..2)].into(),
                class_id: c,
                t_start: start,
                t_end: start + len,
            });
        }
    }
    let mut dets = Vec::new();
    for _ in 0..rng.random_range(0..=12) {
        let t = f64::from(rng.random_range(0..46u32)) * 0.5;
        dets.push(Detection {
            video_id: videos[rng.random_range(0..2)].into(),
            class_id: classes[rng.random_range(0..classes.len())],
            frame_index: (t * 2.0) as u64,
            time_s: t,
        });
    }
    (dets, gt)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    for k in 0..200 {
        let (dets, gt) = random_instance(&mut rng);
        if dets.is_empty() && gt.is_empty() {
            continue;
        }
        let report = evaluation::match_detections(&dets, &gt).map_err(err)?;
        let got = evaluation::macro_f1(&report, MacroOptions::default()).map_err(err)?;
        let want = oracle_macro_f1(&dets, &gt);
        check(got == want, || format!("instance {k}: macro-F1 {got}, oracle {want}"))?;
        checked += 1;
    }

    let gt: Vec<GroundTruthEvent> = (0..5)
        .map(|i| GroundTruthEvent {
            video_id: "v".into(),
            class_id: 10 + i,
            t_start: f64::from(i) * 4.0,
            t_end: f64::from(i) * 4.0 + 2.0,
        })
        .collect();
    let perfect: Vec<Detection> = gt.iter().map(|e| det(e.class_id, e.t_start + 1.0)).collect();
    let report = evaluation::match_detections(&perfect, &gt).map_err(err)?;
    let f1 = evaluation::macro_f1(&report, MacroOptions::default()).map_err(err)?;
    check(f1 == 1.0, || format!("perfect input gave {f1}"))?;
    Ok(format!("{checked} instances match the oracle, perfect input 1.0"))
}

fn oracle_adapters(labels: &BTreeMap<String, u16>) -> Result<Adapters, String> {
    let labels: HashMap<String, u16> = labels.iter().map(|(k, v)| (k.clone(), *v)).collect();
    Ok(Adapters {
        product: build_segmenter(&SegmenterConfig::Null, SegmenterRole::Product).map_err(err)?,
        hand: build_segmenter(&SegmenterConfig::Null, SegmenterRole::Hand).map_err(err)?,
        // frames outside every event carry no label; 116 never occurs in the scenarios
        classifier: Box::new(ManifestClassifier::from_labels(labels, Some(116)).map_err(err)?),
    })
}

fn score(dets: &[Detection], gt: &[GroundTruthEvent]) -> Result<f64, String> {
    let report = evaluation::match_detections(dets, gt).map_err(err)?;
    evaluation::macro_f1(&report, MacroOptions::default()).map_err(err)
}

fn criterion_9() -> Outcome {
    let spec = ScenarioSpec::default();
    let synth = synthgen::generate(&spec).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let files = synthgen::write_output(&spec, &synth, dir.path()).map_err(err)?;
    let seq = framesift::ingest::load_frame_dir(&files.frame_dir, spec.frame_rate).map_err(err)?;

    let mut cfg = PipelineConfig::default();
    cfg.ingest.frame_rate = spec.frame_rate;
    let adapters = oracle_adapters(&synth.labels)?;
    let dets = detect::detect_video(&seq, &cfg, &adapters).map_err(err)?;
    let gt = evaluation::read_gt_csv(&files.gt_csv).map_err(err)?;
    let f1 = score(&dets, &gt)?;
    let summary = format!("{} frames, {} events, {} detections, F1 {f1:.4}", seq.len(), gt.len(), dets.len());
    check(gt.len() == 5 && f1 >= 0.90, || summary.clone())?;
    Ok(summary)
}

/// Objects that linger and pulse in size, so the smoothed signal carries
/// several peaks per event.
fn duplicate_scenario() -> ScenarioSpec {
    let events = [5, 14, 33, 71, 90]
        .iter()
        .enumerate()
        .map(|(i, &class_id)| ScenarioEvent {
            class_id,
            enter_t: 2.0 + 6.0 * i as f64,
            exit_t: 5.0 + 6.0 * i as f64,
            wiggle_amp: 0.3,
            wiggle_hz: 1.2,
            ..ScenarioEvent::default()
        })
        .collect();
    ScenarioSpec {
        video_id: "dup".into(),
        frame_rate: 60.0,
        seed: 11,
        events,
        ..ScenarioSpec::default()
    }
}

fn criterion_10() -> Outcome {
    let spec = duplicate_scenario();
    let synth = synthgen::generate(&spec).map_err(err)?;
    let adapters = oracle_adapters(&synth.labels)?;
    let mut scores = Vec::new();
    for preset in ["color_cbt", "color_seg_max_cbt", "color_seg_max_dedupe_cbt"] {
        let mut cfg = PipelineConfig::preset(preset).map_err(err)?;
        cfg.ingest.frame_rate = spec.frame_rate;
        let dets = detect::detect_video(&synth.sequence, &cfg, &adapters).map_err(err)?;
        scores.push((preset, score(&dets, &synth.ground_truth)?));
    }
    let summary = scores
        .iter()
        .map(|(p, f)| format!("{p} {f:.4}"))
        .collect::<Vec<_>>()
        .join(" -> ");
    check(scores.windows(2).all(|w| w[1].1 >= w[0].1), || summary.clone())?;
    Ok(summary)
}

fn criterion_11() -> Outcome {
    let (inner, outer) = ([250u8, 200, 10], [10u8, 60, 240]);
    let (w, h) = (101, 61);
    let (cx, cy) = (50, 30);
    for shape in [GradientShape::Circular, GradientShape::Rectangular] {
        let spec = GradientSpec {
            shape,
            inner_color: inner,
            outer_color: outer,
            center: None,
        };
        let img = gradient_background(w, h, &spec).map_err(err)?;
        let name = shape.name();
        check(img.pixel(cx, cy) == inner, || format!("{name}: center {:?}", img.pixel(cx, cy)))?;
        for (x, y) in [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)] {
            check(img.pixel(x, y) == outer, || format!("{name}: corner ({x},{y}) {:?}", img.pixel(x, y)))?;
        }
        if shape == GradientShape::Rectangular {
            for (x, y) in [(0, cy), (w - 1, cy), (cx, 0), (cx, h - 1)] {
                check(img.pixel(x, y) == outer, || format!("{name}: edge ({x},{y}) {:?}", img.pixel(x, y)))?;
            }
        }
        // halfway from the center to the corner
        let mid = img.pixel(cx + 25, cy + 15);
        for ch in 0..3 {
            let mean = (f64::from(inner[ch]) + f64::from(outer[ch])) / 2.0;
            check((f64::from(mid[ch]) - mean).abs() <= 1.0, || format!("{name}: midpoint {mid:?}"))?;
        }
    }
    Ok("circular and rectangular".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("colorfulness unit values", Some(1.0), criterion_1),
        ("otsu oracle equivalence", Some(1.0), criterion_2),
        ("savitzky-golay polynomial reproduction", Some(1.0), criterion_3),
        ("fft low-pass", None, criterion_4),
        ("contour flood-fill oracle", None, criterion_5),
        ("entropy masking", None, criterion_6),
        ("cbt and dedupe properties", None, criterion_7),
        ("macro-f1 matching oracle", None, criterion_8),
        ("end-to-end synthetic scenario", Some(60.0), criterion_9),
        ("ablation direction", None, criterion_10),
        ("gradient background", None, criterion_11),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if secs >= *b => Err(format!("took {secs:.2} s, budget {b} s")),
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(result.is_err());
        println!("{tag} {:>2} {name} ({secs:.2} s): {detail}", i + 1);
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
