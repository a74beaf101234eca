//! Framing and generalized cross-correlation with phase transform.
//!
//! The correlation at integer lag `tau` is
//!
//! ```text
//! R_ij[tau] = 1/N * sum_k Re[ X_i[k] X_j*[k] / (|X_i[k] X_j*[k]| + eps) * exp(i 2 pi k tau / N) ]
//! ```
//!
//! over the full `N`-point DFT of each frame, with no zero padding. A source
//! closer to microphone `i` than to microphone `j` produces a peak at a
//! negative lag.

use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Guard added to the cross-spectrum magnitude before PHAT normalization.
pub const PHAT_EPSILON: f64 = 1e-12;

/// One channel of audio covering a single analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl Frame {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("frame must contain at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// GCC-PHAT values over lags `-tau_max..=tau_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVector {
    pub values: Vec<f64>,
    pub tau_max: usize,
    /// Set when one of the inputs had zero energy; `values` are all zero then.
    pub degenerate: bool,
}

impl CorrelationVector {
    pub fn value(&self, lag: i64) -> f64 {
        self.values[(lag + self.tau_max as i64) as usize]
    }

    pub fn lags(&self) -> impl Iterator<Item = i64> {
        let t = self.tau_max as i64;
        -t..=t
    }

    /// Lag of the largest value; ties go to the smaller `|lag|`, then the smaller lag.
    pub fn argmax(&self) -> i64 {
        let mut best = (-(self.tau_max as i64), f64::NEG_INFINITY);
        for (lag, &v) in self.lags().zip(&self.values) {
            if v > best.1 || (v == best.1 && lag_before(lag, best.0)) {
                best = (lag, v);
            }
        }
        best.0
    }
}

/// Tie-break order used across the crate: smaller `|lag|` first, then smaller lag.
pub(crate) fn lag_before(a: i64, b: i64) -> bool {
    (a.abs(), a) < (b.abs(), b)
}

/// Splits equally long channels into non-overlapping or overlapping windows.
///
/// Frame `t` covers samples `[t*hop, t*hop + window_len)`; a trailing partial
/// window is dropped. The result is indexed `[frame][channel]`.
pub fn frame_signal(
    channels: &[Vec<f64>],
    sample_rate: f64,
    window_len: usize,
    hop: usize,
) -> Result<Vec<Vec<Frame>>> {
    if window_len == 0 || hop == 0 {
        return Err(Error::InvalidInput("window length and hop must be positive".into()));
    }
    let Some(first) = channels.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::Shape("all channels must have the same length".into()));
    }
    if len < window_len {
        return Ok(Vec::new());
    }
    let count = (len - window_len) / hop + 1;
    (0..count)
        .map(|t| {
            let start = t * hop;
            channels
                .iter()
                .map(|c| Frame::new(c[start..start + window_len].to_vec(), sample_rate))
                .collect()
        })
        .collect()
}

/// FFT plans for one frame length, reusable across many correlations.
#[derive(Clone)]
pub struct GccPhat {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GccPhat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GccPhat").field("n", &self.n).finish()
    }
}

impl GccPhat {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub(crate) fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Unnormalized inverse transform.
    pub(crate) fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
    }

    pub fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    pub fn correlate(
        &self,
        x_i: &[f64],
        x_j: &[f64],
        tau_max: usize,
        epsilon: f64,
    ) -> Result<CorrelationVector> {
        check_pair(x_i.len(), x_j.len(), tau_max)?;
        if x_i.len() != self.n {
            return Err(Error::Shape(format!(
                "planned for {} samples, got {}",
                self.n,
                x_i.len()
            )));
        }
        let degenerate = is_silent(x_i) || is_silent(x_j);
        let xi = self.spectrum(x_i);
        let xj = self.spectrum(x_j);
        let mut cross: Vec<Complex64> = xi
            .iter()
            .zip(&xj)
            .map(|(a, b)| {
                let c = a * b.conj();
                c / (c.norm() + epsilon)
            })
            .collect();
        self.inverse.process(&mut cross);

        let n = self.n as i64;
        let scale = 1.0 / self.n as f64;
        let t = tau_max as i64;
        let values = (-t..=t)
            .map(|lag| {
                let c = cross[lag.rem_euclid(n) as usize];
                debug_assert!(c.im.abs() * scale <= 1e-9, "imaginary residue {}", c.im * scale);
                c.re * scale
            })
            .collect();
        Ok(CorrelationVector {
            values,
            tau_max,
            degenerate,
        })
    }
}

fn check_pair(n_i: usize, n_j: usize, tau_max: usize) -> Result<()> {
    if n_i != n_j {
        return Err(Error::Shape(format!("frame lengths differ: {n_i} vs {n_j}")));
    }
    if n_i == 0 || 2 * tau_max >= n_i {
        return Err(Error::InvalidInput(format!(
            "tau_max {tau_max} must be below half the frame length {n_i}"
        )));
    }
    Ok(())
}

fn is_silent(x: &[f64]) -> bool {
    x.iter().all(|&v| v == 0.0)
}

/// GCC-PHAT of two frames via FFT.
pub fn gcc_phat(x_i: &Frame, x_j: &Frame, tau_max: usize, epsilon: f64) -> Result<CorrelationVector> {
    check_pair(x_i.len(), x_j.len(), tau_max)?;
    GccPhat::new(x_i.len()).correlate(&x_i.samples, &x_j.samples, tau_max, epsilon)
}

/// Term-by-term O(N^2) evaluation of the same sum, DFT included.
///
/// Used as the independent reference for [`gcc_phat`]; intended for short
/// frames (N up to a few thousand).
pub fn gcc_phat_direct(
    x_i: &Frame,
    x_j: &Frame,
    tau_max: usize,
    epsilon: f64,
) -> Result<CorrelationVector> {
    check_pair(x_i.len(), x_j.len(), tau_max)?;
    let n = x_i.len();
    let degenerate = is_silent(&x_i.samples) || is_silent(&x_j.samples);
    let dft = |x: &[f64]| -> Vec<Complex64> {
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(m, &v)| {
                        // reduce k*m mod n before scaling to keep the phase exact
                        let phase = -2.0 * std::f64::consts::PI * ((k * m) % n) as f64 / n as f64;
                        Complex64::from_polar(v, phase)
                    })
                    .sum()
            })
            .collect()
    };
    let xi = dft(&x_i.samples);
    let xj = dft(&x_j.samples);
    let weighted: Vec<Complex64> = xi
        .iter()
        .zip(&xj)
        .map(|(a, b)| {
            let c = a * b.conj();
            c / (c.norm() + epsilon)
        })
        .collect();
    let t = tau_max as i64;
    let values = (-t..=t)
        .map(|lag| {
            let shift = lag.rem_euclid(n as i64) as usize;
            let sum: f64 = weighted
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    let phase = 2.0 * std::f64::consts::PI * ((k * shift) % n) as f64 / n as f64;
                    (g * Complex64::from_polar(1.0, phase)).re
                })
                .sum();
            sum / n as f64
        })
        .collect();
    Ok(CorrelationVector {
        values,
        tau_max,
        degenerate,
    })
}

/// Up to `k` local maxima of the correlation, largest first.
///
/// A lag qualifies when its value is at least that of each neighbor (the
/// end lags have one neighbor). Ties are broken by smaller `|lag|`, then
/// smaller lag.
pub fn top_k_peaks(corr: &CorrelationVector, k: usize) -> Vec<(i64, f64)> {
    let v = &corr.values;
    let mut peaks: Vec<(i64, f64)> = corr
        .lags()
        .enumerate()
        .filter(|&(idx, _)| {
            let left = idx == 0 || v[idx] >= v[idx - 1];
            let right = idx + 1 == v.len() || v[idx] >= v[idx + 1];
            left && right
        })
        .map(|(idx, lag)| (lag, v[idx]))
        .collect();
    peaks.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.0.abs().cmp(&b.0.abs()))
            .then(a.0.cmp(&b.0))
    });
    peaks.truncate(k);
    peaks
}

/// Writes correlation rows as `pair_i,pair_j,lag,value` CSV with a header.
pub fn write_correlation_csv<W: Write>(
    mut out: W,
    rows: &[(usize, usize, &CorrelationVector)],
) -> Result<()> {
    writeln!(out, "pair_i,pair_j,lag,value")?;
    for (i, j, corr) in rows {
        for (lag, value) in corr.lags().zip(&corr.values) {
            writeln!(out, "{i},{j},{lag},{value}")?;
        }
    }
    Ok(())
}
