//! Detection-to-event matching and macro-F1.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::MAX_CLASS;
use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::numfmt::format_sig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub video_id: String,
    pub class_id: u16,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

/// Per-class counts for every class seen in the detections or ground truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: BTreeMap<u16, ClassCounts>,
}

impl EvalReport {
    /// Adds another report's counts, e.g. from a different video.
    pub fn merge(&mut self, other: &EvalReport) {
        for (c, k) in &other.classes {
            let e = self.classes.entry(*c).or_default();
            e.tp += k.tp;
            e.fp += k.fp;
            e.fn_ += k.fn_;
        }
    }
}

pub fn validate_events(gt: &[GroundTruthEvent]) -> Result<()> {
    for e in gt {
        if !(e.t_start.is_finite() && e.t_end.is_finite() && e.t_start <= e.t_end) {
            return Err(Error::InvalidArgument(format!(
                "event {}/{} has t_start {} after t_end {}",
                e.video_id, e.class_id, e.t_start, e.t_end
            )));
        }
    }
    Ok(())
}

/// Greedy matching in detection time order. A detection matches the
/// unmatched event of its video and class whose window contains it and ends
/// first; unmatched detections are false positives of their predicted class
/// and unmatched events false negatives of their true class.
pub fn match_detections(detections: &[Detection], gt: &[GroundTruthEvent]) -> Result<EvalReport> {
    validate_events(gt)?;
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[a].time_s.total_cmp(&detections[b].time_s));

    let mut matched = vec![false; gt.len()];
    let mut report = EvalReport::default();
    for &i in &order {
        let d = &detections[i];
        let hit = gt
            .iter()
            .enumerate()
            .filter(|(j, e)| {
                !matched[*j]
                    && e.video_id == d.video_id
                    && e.class_id == d.class_id
                    && e.t_start <= d.time_s
                    && d.time_s <= e.t_end
            })
            .min_by(|(_, a), (_, b)| a.t_end.total_cmp(&b.t_end).then(a.t_start.total_cmp(&b.t_start)))
            .map(|(j, _)| j);
        let counts = report.classes.entry(d.class_id).or_default();
        match hit {
            Some(j) => {
                matched[j] = true;
                counts.tp += 1;
            }
            None => counts.fp += 1,
        }
    }
    for (e, m) in gt.iter().zip(&matched) {
        let counts = report.classes.entry(e.class_id).or_default();
        if !m {
            counts.fn_ += 1;
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroOptions {
    /// Average over all 116 classes instead of the observed ones.
    pub fixed_q: bool,
    /// Weight each class F1 by its event count.
    pub weighted: bool,
}

/// Mean per-class F1. `Q` is the set of classes present in the report unless
/// `fixed_q` is set.
pub fn macro_f1(report: &EvalReport, opts: MacroOptions) -> Result<f64> {
    if report.classes.is_empty() && !opts.fixed_q {
        return Err(Error::InvalidArgument("no classes to average over".into()));
    }
    if opts.weighted {
        let total: usize = report.classes.values().map(ClassCounts::support).sum();
        let sum: f64 = report.classes.values().map(|c| c.support() as f64 * c.f1()).sum();
        return Ok(ratio_f(sum, total as f64));
    }
    let q = if opts.fixed_q {
        MAX_CLASS as f64
    } else {
        report.classes.len() as f64
    };
    Ok(report.classes.values().map(ClassCounts::f1).sum::<f64>() / q)
}

fn ratio_f(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn read_gt_csv(path: &Path) -> Result<Vec<GroundTruthEvent>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let events: Vec<GroundTruthEvent> = reader
        .deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect::<Result<_>>()?;
    validate_events(&events)?;
    Ok(events)
}

pub fn write_gt_csv(path: &Path, events: &[GroundTruthEvent]) -> Result<()> {
    let mut out = String::from("video_id,class_id,t_start,t_end\n");
    for e in events {
        out.push_str(&format!("{},{},{},{}\n", e.video_id, e.class_id, e.t_start, e.t_end));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `class_id,tp,fp,fn,precision,recall,f1` rows, then a `macro` row.
pub fn report_csv(report: &EvalReport, macro_value: f64) -> String {
    let mut out = String::from("class_id,tp,fp,fn,precision,recall,f1\n");
    for (c, k) in &report.classes {
        let _ = writeln!(
            out,
            "{c},{},{},{},{},{},{}",
            k.tp,
            k.fp,
            k.fn_,
            format_sig(k.precision(), 9),
            format_sig(k.recall(), 9),
            format_sig(k.f1(), 9)
        );
    }
    let _ = writeln!(out, "macro,,,,,,{}", format_sig(macro_value, 9));
    out
}

pub fn report_table(report: &EvalReport, macro_value: f64) -> String {
    let mut out = format!(
        "{:>6} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9}\n",
        "class", "tp", "fp", "fn", "precision", "recall", "f1"
    );
    for (c, k) in &report.classes {
        let _ = writeln!(
            out,
            "{c:>6} {:>5} {:>5} {:>5} {:>9.4} {:>9.4} {:>9.4}",
            k.tp,
            k.fp,
            k.fn_,
            k.precision(),
            k.recall(),
            k.f1()
        );
    }
    let _ = writeln!(out, "macro_f1 {macro_value:.4}");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(class_id: u16, t: f64) -> Detection {
        Detection {
            video_id: "v".into(),
            class_id,
            frame_index: 0,
            time_s: t,
        }
    }

    fn ev(class_id: u16, a: f64, b: f64) -> GroundTruthEvent {
        GroundTruthEvent {
            video_id: "v".into(),
            class_id,
            t_start: a,
            t_end: b,
        }
    }

    #[test]
    fn perfect_matching() {
        let gt = vec![ev(1, 0.0, 2.0), ev(2, 3.0, 4.0)];
        let dets = vec![det(1, 1.0), det(2, 3.5)];
        let r = match_detections(&dets, &gt).unwrap();
        assert!(r.classes.values().all(|c| c.fp == 0 && c.fn_ == 0));
        assert_eq!(macro_f1(&r, MacroOptions::default()).unwrap(), 1.0);
    }

    #[test]
    fn miss_and_double_hit() {
        let r = match_detections(&[det(1, 5.0)], &[ev(1, 0.0, 2.0)]).unwrap();
        assert_eq!(r.classes[&1], ClassCounts { tp: 0, fp: 1, fn_: 1 });
        let r = match_detections(&[det(1, 0.5), det(1, 1.5)], &[ev(1, 0.0, 2.0)]).unwrap();
        assert_eq!(r.classes[&1], ClassCounts { tp: 1, fp: 1, fn_: 0 });
        // right time, wrong class
        let r = match_detections(&[det(2, 1.0)], &[ev(1, 0.0, 2.0)]).unwrap();
        assert_eq!(r.classes[&1], ClassCounts { tp: 0, fp: 0, fn_: 1 });
        assert_eq!(r.classes[&2], ClassCounts { tp: 0, fp: 1, fn_: 0 });
        // other video
        let mut d = det(1, 1.0);
        d.video_id = "w".into();
        assert_eq!(match_detections(&[d], &[ev(1, 0.0, 2.0)]).unwrap().classes[&1].tp, 0);
    }

    #[test]
    fn half_precision_half_recall() {
        let c = ClassCounts { tp: 1, fp: 1, fn_: 1 };
        let mut r = EvalReport::default();
        r.classes.insert(4, c);
        assert_eq!(macro_f1(&r, MacroOptions::default()).unwrap(), 0.5);
        let fixed = macro_f1(&r, MacroOptions { fixed_q: true, weighted: false }).unwrap();
        assert!((fixed - 0.5 / 116.0).abs() < 1e-15);
    }

    #[test]
    fn zero_division_and_empty() {
        assert_eq!(ClassCounts::default().f1(), 0.0);
        assert_eq!(ClassCounts { tp: 0, fp: 3, fn_: 0 }.precision(), 0.0);
        assert!(macro_f1(&EvalReport::default(), MacroOptions::default()).is_err());
        assert_eq!(
            macro_f1(&EvalReport::default(), MacroOptions { fixed_q: true, weighted: false }).unwrap(),
            0.0
        );
    }

    #[test]
    fn weighted_variant() {
        let mut r = EvalReport::default();
        r.classes.insert(1, ClassCounts { tp: 3, fp: 0, fn_: 0 });
        r.classes.insert(2, ClassCounts { tp: 0, fp: 0, fn_: 1 });
        let w = macro_f1(&r, MacroOptions { fixed_q: false, weighted: true }).unwrap();
        assert!((w - 0.75).abs() < 1e-15);
        assert_eq!(macro_f1(&r, MacroOptions::default()).unwrap(), 0.5);
    }

    #[test]
    fn greedy_prefers_the_window_that_ends_first() {
        // overlapping windows: grabbing the long one first would strand the
        // second detection
        let gt = vec![ev(1, 0.0, 10.0), ev(1, 1.0, 2.0)];
        let r = match_detections(&[det(1, 1.5), det(1, 5.0)], &gt).unwrap();
        assert_eq!(r.classes[&1], ClassCounts { tp: 2, fp: 0, fn_: 0 });
    }

    #[test]
    fn gt_csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.csv");
        let gt = vec![ev(3, 0.25, 1.5), ev(116, 2.0, 2.0)];
        write_gt_csv(&p, &gt).unwrap();
        assert_eq!(read_gt_csv(&p).unwrap(), gt);
        std::fs::write(&p, "video_id,class_id,t_start,t_end\nv,1,3.0,2.0\n").unwrap();
        assert!(read_gt_csv(&p).is_err());
    }

    #[test]
    fn report_formats() {
        let mut r = EvalReport::default();
        r.classes.insert(2, ClassCounts { tp: 1, fp: 1, fn_: 1 });
        let csv = report_csv(&r, 0.5);
        assert_eq!(csv, "class_id,tp,fp,fn,precision,recall,f1\n2,1,1,1,0.5,0.5,0.5\nmacro,,,,,,0.5\n");
        assert!(report_table(&r, 0.5).ends_with("macro_f1 0.5000\n"));
    }

    proptest! {
        #[test]
        fn counts_are_conserved(
            dets in proptest::collection::vec((1u16..4, 0u32..100), 0..15),
            gts in proptest::collection::vec((1u16..4, 0u32..100, 0u32..20), 0..15),
        ) {
            let dets: Vec<_> = dets.into_iter().map(|(c, t)| det(c, t as f64 / 10.0)).collect();
            let gt: Vec<_> = gts.into_iter().map(|(c, a, l)| ev(c, a as f64 / 10.0, (a + l) as f64 / 10.0)).collect();
            let r = match_detections(&dets, &gt).unwrap();
            for (c, k) in &r.classes {
                prop_assert_eq!(k.tp + k.fn_, gt.iter().filter(|e| e.class_id == *c).count());
                prop_assert_eq!(k.tp + k.fp, dets.iter().filter(|d| d.class_id == *c).count());
            }
            if !r.classes.is_empty() {
                let m = macro_f1(&r, MacroOptions::default()).unwrap();
                prop_assert!((0.0..=1.0).contains(&m));
                let mut shuffled = EvalReport::default();
                for (c, k) in r.classes.iter().rev() {
                    shuffled.classes.insert(200 - c, *k);
                }
                prop_assert!((macro_f1(&shuffled, MacroOptions::default()).unwrap() - m).abs() < 1e-12);
            }
        }
    }
}
