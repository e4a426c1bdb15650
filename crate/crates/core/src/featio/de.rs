//! Differential entropy extraction from raw 1-second windows.
//!
//! Band power is taken from the window's FFT periodogram over the half-open
//! range `[low, high)` Hz; the DE of a Gaussian band-limited signal is then
//! `0.5 ln(2 pi e sigma^2)`. The band variance is clamped at 1e-12 so silent
//! channels produce a large negative value instead of -inf.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use super::DatasetManifest;
use crate::error::{Error, Result};

/// Variance floor applied before the logarithm.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Extract a `[n_channels, n_bands]` DE matrix from one second of raw
/// signal (`raw_window` is `[n_channels, fs]` samples).
pub fn extract_de(raw_window: &Array2<f64>, manifest: &DatasetManifest) -> Result<Array2<f64>> {
    manifest.validate()?;
    let n_ch = manifest.n_channels();
    let n = manifest.fs.round() as usize;
    if raw_window.nrows() != n_ch || raw_window.ncols() != n {
        return Err(Error::Shape(format!(
            "raw window is {}x{}, manifest demands {}x{} (channels x samples)",
            raw_window.nrows(),
            raw_window.ncols(),
            n_ch,
            n
        )));
    }
    if raw_window.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("raw window contains non-finite samples".into()));
    }

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut out = Array2::zeros((n_ch, manifest.n_bands()));
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(n);
    for (ch, row) in raw_window.rows().into_iter().enumerate() {
        buf.clear();
        buf.extend(row.iter().map(|&x| Complex::new(x, 0.0)));
        fft.process(&mut buf);
        // two-sided periodogram; DC excluded so the mean never counts as power
        for (b, &(lo, hi)) in manifest.bands.iter().enumerate() {
            let mut power = 0.0;
            for (k, v) in buf.iter().enumerate().skip(1) {
                let freq = k.min(n - k) as f64 * manifest.fs / n as f64;
                if freq >= lo && freq < hi {
                    power += v.norm_sqr();
                }
            }
            let variance = (power / (n as f64 * n as f64)).max(VARIANCE_FLOOR);
            out[[ch, b]] = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * variance).ln();
        }
    }
    Ok(out)
}
