//! Static SVG plots of a signal, its smoothed version and the picked frames.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signals::SignalSeries;

const W: f64 = 900.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;

pub struct PlotInput<'a> {
    pub title: &'a str,
    pub raw: &'a SignalSeries,
    pub smoothed: Option<&'a SignalSeries>,
    /// Frame indices marked as peaks.
    pub peaks: &'a [u64],
    /// Frame indices marked as kept candidates.
    pub kept: &'a [u64],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(input: &PlotInput) -> String {
    let idx = input.raw.frame_indices();
    let (x_lo, x_hi) = match (idx.first(), idx.last()) {
        (Some(&a), Some(&b)) if b > a => (a as f64, b as f64),
        (Some(&a), _) => (a as f64, a as f64 + 1.0),
        _ => (0.0, 1.0),
    };
    let all = input
        .raw
        .values()
        .iter()
        .chain(input.smoothed.map(|s| s.values()).unwrap_or(&[]));
    let (mut y_lo, mut y_hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !y_lo.is_finite() || y_hi <= y_lo {
        y_lo = if y_lo.is_finite() { y_lo - 1.0 } else { 0.0 };
        y_hi = y_lo + 2.0;
    }
    let sx = |x: f64| PAD + (x - x_lo) / (x_hi - x_lo) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);
    let path = |s: &SignalSeries| {
        let mut d = String::new();
        for (k, (i, v)) in s.frame_indices().iter().zip(s.values()).enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if k == 0 { "M" } else { " L" }, sx(*i as f64), sy(*v));
        }
        d
    };

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        escape(input.title)
    );
    let _ = writeln!(
        svg,
        "<path d=\"M{PAD},{PAD} V{b} H{r}\" fill=\"none\" stroke=\"#444\"/>",
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(
        svg,
        "<text x=\"4\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{y_hi:.3}</text>\n\
         <text x=\"4\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{y_lo:.3}</text>",
        PAD + 4.0,
        H - PAD
    );
    let _ = writeln!(svg, "<path d=\"{}\" fill=\"none\" stroke=\"#9ab\" stroke-width=\"1\"/>", path(input.raw));
    if let Some(s) = input.smoothed {
        let _ = writeln!(svg, "<path d=\"{}\" fill=\"none\" stroke=\"#c33\" stroke-width=\"1.5\"/>", path(s));
    }
    let reference = input.smoothed.unwrap_or(input.raw);
    let value_at = |f: u64| {
        reference
            .frame_indices()
            .binary_search(&f)
            .ok()
            .map(|p| reference.values()[p])
    };
    for &p in input.peaks {
        if let Some(v) = value_at(p) {
            let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#c33\"/>", sx(p as f64), sy(v));
        }
    }
    for &k in input.kept {
        let x = sx(k as f64);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{PAD}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#2a2\" stroke-dasharray=\"4 3\"/>",
            H - PAD
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(path: &Path, input: &PlotInput) -> Result<()> {
    std::fs::write(path, render_svg(input)).map_err(|e| Error::io(path, e))
}
