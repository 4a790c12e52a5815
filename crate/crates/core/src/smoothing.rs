//! Series smoothing (Savitzky-Golay, FFT low-pass) and local-maximum picking.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::config::{SmoothingConfig, SmoothingMethod};
use crate::error::{Error, Result};
use crate::signals::SignalSeries;

/// Solves the small dense system `a x = b` by Gaussian elimination with
/// partial pivoting. `a` is row-major `n x n`.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Some(x)
}

/// Weights `w` such that `sum_j w[j] * y[j]` is the least-squares polynomial
/// of degree `polyorder` through the `window` samples, evaluated at sample
/// position `at` (0-based within the window).
fn savgol_weights(window: usize, polyorder: usize, at: usize) -> Vec<f64> {
    let half = (window / 2) as f64;
    let terms = polyorder + 1;
    // Abscissae scaled into [-1, 1] keep the normal equations well conditioned.
    let u: Vec<f64> = (0..window).map(|j| (j as f64 - half) / half).collect();
    let powers = |x: f64| -> Vec<f64> {
        let mut p = Vec::with_capacity(terms);
        let mut acc = 1.0;
        for _ in 0..terms {
            p.push(acc);
            acc *= x;
        }
        p
    };
    let rows: Vec<Vec<f64>> = u.iter().map(|&x| powers(x)).collect();
    let mut gram = vec![0.0; terms * terms];
    for r in &rows {
        for i in 0..terms {
            for k in 0..terms {
                gram[i * terms + k] += r[i] * r[k];
            }
        }
    }
    let z = solve(gram, powers(u[at])).expect("Vandermonde gram matrix is nonsingular");
    rows.iter()
        .map(|r| r.iter().zip(&z).map(|(a, b)| a * b).sum())
        .collect()
}

/// Savitzky-Golay smoothing. Interior samples use the centered window; the
/// first and last `window / 2` samples are read off the polynomial fitted to
/// the first and last full window.
pub fn savgol_smooth(series: &SignalSeries, window: usize, polyorder: usize) -> Result<SignalSeries> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "Savitzky-Golay window must be odd and >= 3, got {window}"
        )));
    }
    if polyorder >= window {
        return Err(Error::InvalidArgument(format!(
            "polyorder {polyorder} must be below window {window}"
        )));
    }
    let y = series.values();
    let n = y.len();
    if n < window {
        return Err(Error::InvalidArgument(format!(
            "series of length {n} is shorter than the window {window}"
        )));
    }
    let half = window / 2;
    let apply = |w: &[f64], start: usize| -> f64 { w.iter().zip(&y[start..start + window]).map(|(a, b)| a * b).sum() };

    let mut out = vec![0.0; n];
    let center = savgol_weights(window, polyorder, half);
    for (i, o) in out.iter_mut().enumerate().take(n - half).skip(half) {
        *o = apply(&center, i - half);
    }
    for k in 0..half {
        out[k] = apply(&savgol_weights(window, polyorder, k), 0);
        let at = window - 1 - k;
        out[n - 1 - k] = apply(&savgol_weights(window, polyorder, at), n - window);
    }
    series.with_values(out)
}

/// Zeroes every DFT bin above `ceil(keep_fraction * N / 2)` (with its mirror)
/// and transforms back.
pub fn fft_lowpass(series: &SignalSeries, keep_fraction: f64) -> Result<SignalSeries> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let n = series.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "FFT smoothing needs at least 2 samples, got {n}"
        )));
    }
    let cutoff = (keep_fraction * n as f64 / 2.0).ceil() as usize;
    let mut buf: Vec<Complex<f64>> = series.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, bin) in buf.iter_mut().enumerate() {
        if k.min(n - k) > cutoff {
            *bin = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    series.with_values(buf.iter().map(|c| c.re * scale).collect())
}

/// Applies the configured smoothing method.
pub fn smooth(series: &SignalSeries, cfg: &SmoothingConfig) -> Result<SignalSeries> {
    match cfg.method {
        SmoothingMethod::Savgol => savgol_smooth(series, cfg.window, cfg.polyorder),
        SmoothingMethod::Fft => fft_lowpass(series, cfg.keep_fraction),
        SmoothingMethod::None => Ok(series.clone()),
    }
}

/// Like [`smooth`], but short series shrink the Savitzky-Golay window to the
/// largest odd length that fits, and series too short to filter pass through
/// unchanged.
pub fn smooth_lenient(series: &SignalSeries, cfg: &SmoothingConfig) -> Result<SignalSeries> {
    let n = series.len();
    match cfg.method {
        SmoothingMethod::Savgol if n < cfg.window => {
            let window = if n % 2 == 1 { n } else { n.saturating_sub(1) };
            if window < 3 || cfg.polyorder >= window {
                Ok(series.clone())
            } else {
                savgol_smooth(series, window, cfg.polyorder)
            }
        }
        SmoothingMethod::Fft if n < 2 => Ok(series.clone()),
        _ => smooth(series, cfg),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    /// Position within the series.
    pub position: usize,
    pub frame_index: u64,
    pub value: f64,
    pub prominence: f64,
}

/// Strict interior local maxima. A plateau counts once, at its first sample,
/// when it is strictly above both neighbors. Prominence is the height above
/// the higher of the two minima reached walking out from the peak until a
/// strictly higher sample or the series end.
pub fn find_peaks(series: &SignalSeries, min_prominence: f64) -> Vec<Peak> {
    let v = series.values();
    let n = v.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if v[i] > v[i - 1] {
            let mut end = i;
            while end + 1 < n && v[end + 1] == v[i] {
                end += 1;
            }
            if end + 1 < n && v[end + 1] < v[i] {
                let height = v[i];
                let mut left_min = height;
                for &x in v[..i].iter().rev() {
                    if x > height {
                        break;
                    }
                    left_min = left_min.min(x);
                }
                let mut right_min = height;
                for &x in &v[end + 1..] {
                    if x > height {
                        break;
                    }
                    right_min = right_min.min(x);
                }
                let prominence = height - left_min.max(right_min);
                if prominence >= min_prominence {
                    peaks.push(Peak {
                        position: i,
                        frame_index: series.frame_indices()[i],
                        value: height,
                        prominence,
                    });
                }
            }
            i = end + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Frame indices of [`find_peaks`].
pub fn local_maxima(series: &SignalSeries, min_prominence: f64) -> Vec<u64> {
    find_peaks(series, min_prominence)
        .into_iter()
        .map(|p| p.frame_index)
        .collect()
}

pub fn write_peaks_csv(path: &std::path::Path, peaks: &[Peak]) -> Result<()> {
    use crate::numfmt::format_sig;
    let mut out = String::from("frame_index,value,prominence\n");
    for p in peaks {
        out.push_str(&format!(
            "{},{},{}\n",
            p.frame_index,
            format_sig(p.value, 9),
            format_sig(p.prominence, 9)
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_peaks_csv(path: &std::path::Path) -> Result<Vec<u64>> {
    #[derive(serde::Deserialize)]
    struct Row {
        frame_index: u64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    reader
        .deserialize::<Row>()
        .map(|r| r.map(|r| r.frame_index).map_err(|e| Error::csv(path, e)))
        .collect()
}
