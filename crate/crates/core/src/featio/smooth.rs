//! Temporal smoothing of DE series within a trial.
//!
//! The default is a fixed-parameter scalar Kalman smoother (random-walk
//! state, unit process noise, observation noise `ratio`), run forward and
//! then backward (Rauch-Tung-Striebel). A centered moving average with
//! reflected edges is available as a fallback.

use std::collections::BTreeMap;

use super::Dataset;
use crate::error::{Error, Result};

/// Smoothing method applied per (channel, band) series within one trial.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothMethod {
    /// Scalar Kalman smoother with state transition 1.0, process noise 1.0,
    /// and observation noise `ratio` (observation/process noise ratio).
    Kalman { ratio: f64 },
    /// Centered moving average with numpy-style reflected edges.
    MovingAverage { width: usize },
}

impl Default for SmoothMethod {
    fn default() -> Self {
        SmoothMethod::Kalman { ratio: 10.0 }
    }
}

/// Smooth one series of DE values (segments of a single trial, in order).
pub fn lds_smooth(series: &[f64], method: &SmoothMethod) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Input("cannot smooth an empty series".into()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("series contains non-finite values".into()));
    }
    match method {
        SmoothMethod::Kalman { ratio } => {
            if *ratio <= 0.0 {
                return Err(Error::Config("Kalman noise ratio must be > 0".into()));
            }
            Ok(kalman_rts(series, 1.0, *ratio))
        }
        SmoothMethod::MovingAverage { width } => {
            if *width == 0 || width % 2 == 0 {
                return Err(Error::Config("moving-average width must be odd and > 0".into()));
            }
            Ok(moving_average_reflect(series, *width))
        }
    }
}

fn kalman_rts(z: &[f64], q: f64, r: f64) -> Vec<f64> {
    let n = z.len();
    let mut m_pred = vec![0.0; n];
    let mut p_pred = vec![0.0; n];
    let mut m_filt = vec![0.0; n];
    let mut p_filt = vec![0.0; n];
    for t in 0..n {
        let (mp, pp) = if t == 0 {
            (z[0], r)
        } else {
            (m_filt[t - 1], p_filt[t - 1] + q)
        };
        let k = pp / (pp + r);
        m_filt[t] = mp + k * (z[t] - mp);
        p_filt[t] = (1.0 - k) * pp;
        m_pred[t] = mp;
        p_pred[t] = pp;
    }
    let mut out = m_filt.clone();
    for t in (0..n.saturating_sub(1)).rev() {
        let c = p_filt[t] / p_pred[t + 1];
        out[t] = m_filt[t] + c * (out[t + 1] - m_pred[t + 1]);
    }
    out
}

fn reflect_index(mut i: isize, n: isize) -> usize {
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn moving_average_reflect(z: &[f64], width: usize) -> Vec<f64> {
    let n = z.len() as isize;
    let half = (width / 2) as isize;
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for off in -half..=half {
                acc += z[reflect_index(t + off, n)];
            }
            acc / width as f64
        })
        .collect()
}

/// Smooth every (channel, band) series of every trial in place. Records are
/// grouped by (subject, trial) and ordered by segment.
pub fn smooth_dataset(dataset: &mut Dataset, method: &SmoothMethod) -> Result<()> {
    let mut groups: BTreeMap<(u16, u16), Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        groups.entry((r.subject, r.trial)).or_default().push(i);
    }
    let n_ch = dataset.manifest.n_channels();
    let n_bands = dataset.manifest.n_bands();
    for idxs in groups.values_mut() {
        idxs.sort_by_key(|&i| dataset.records[i].segment);
        for ch in 0..n_ch {
            for b in 0..n_bands {
                let series: Vec<f64> =
                    idxs.iter().map(|&i| dataset.records[i].de[[ch, b]]).collect();
                let smoothed = lds_smooth(&series, method)?;
                for (&i, v) in idxs.iter().zip(smoothed) {
                    dataset.records[i].de[[ch, b]] = v;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_is_fixed_point() {
        for method in [SmoothMethod::default(), SmoothMethod::MovingAverage { width: 5 }] {
            let s = vec![2.5; 12];
            let out = lds_smooth(&s, &method).unwrap();
            for v in out {
                assert!((v - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_element_unchanged() {
        for method in [SmoothMethod::default(), SmoothMethod::MovingAverage { width: 5 }] {
            let out = lds_smooth(&[7.25], &method).unwrap();
            assert_eq!(out, vec![7.25]);
        }
    }

    #[test]
    fn impulse_matches_reference_recursion() {
        // frozen from an independent forward-filter + RTS run on the same
        // 9-vector (q = 1, r = 10, prior mean z0 with prior variance r)
        let mut z = vec![0.0; 9];
        z[4] = 1.0;
        let want = [
            0.06400567497559453,
            0.07680680997071343,
            0.09728862596290368,
            0.1274993045513843,
            0.17045991359500337,
            0.13046651399812276,
            0.10351976580105439,
            0.08692499418409147,
            0.0790227219855377,
        ];
        let out = lds_smooth(&z, &SmoothMethod::Kalman { ratio: 10.0 }).unwrap();
        for (o, w) in out.iter().zip(want.iter()) {
            assert!((o - w).abs() < 1e-12, "{o} vs {w}");
        }
    }

    #[test]
    fn moving_average_reflects_edges() {
        // n=3, width 5: index pattern at t=0 is [2,1,0,1,2]
        let out = lds_smooth(&[3.0, 0.0, 6.0], &SmoothMethod::MovingAverage { width: 5 }).unwrap();
        assert!((out[0] - (6.0 + 0.0 + 3.0 + 0.0 + 6.0) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(lds_smooth(&[], &SmoothMethod::default()).is_err());
        assert!(lds_smooth(&[1.0, f64::INFINITY], &SmoothMethod::default()).is_err());
    }
}
