//! GCC-PHAT applied independently to every filter-bank channel, with the
//! exact gradient of the PHAT quotient.
//!
//! With `C = X_i conj(X_j)`, `m = |C|` and `s = 1 / (m + eps)` the forward
//! pass is `R[tau] = (1/N) Re sum_k s C_k e^{i 2 pi k tau / N}`. Writing
//! `gbar` for the gradient of a real loss w.r.t. a complex value (real part
//! plus `i` times imaginary part), the backward pass is
//!
//! ```text
//! Gbar_k = (1/N) sum_tau gR[tau] e^{-i 2 pi k tau / N}
//! Cbar   = s Gbar - (s^2 / m) Re(Gbar conj C) C
//! Xbar_i += Cbar X_j,   Xbar_j += conj(Cbar) X_i
//! xbar[n] = Re sum_k Xbar_k e^{+i 2 pi k n / N}
//! ```

use rustfft::num_complex::Complex64;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::signal::GccPhat;

/// Spectra of every channel of a `[L, N]` feature map.
pub(crate) fn spectra(fft: &GccPhat, feat: &Tensor) -> Vec<Vec<Complex64>> {
    (0..feat.dim(0)).map(|l| fft.spectrum(feat.row(l))).collect()
}

/// `[L, 2 tau_max + 1]` correlations from two sets of channel spectra.
pub(crate) fn correlate_spectra(
    fft: &GccPhat,
    xi: &[Vec<Complex64>],
    xj: &[Vec<Complex64>],
    tau_max: usize,
    eps: f64,
) -> Tensor {
    let n = fft.len();
    let lags = 2 * tau_max + 1;
    let scale = 1.0 / n as f64;
    let mut out = Tensor::zeros(&[xi.len(), lags]);
    for (l, (a, b)) in xi.iter().zip(xj).enumerate() {
        let mut buf: Vec<Complex64> = a
            .iter()
            .zip(b)
            .map(|(a, b)| {
                let c = a * b.conj();
                c / (c.norm() + eps)
            })
            .collect();
        fft.inverse_in_place(&mut buf);
        for (slot, lag) in out.row_mut(l).iter_mut().zip(-(tau_max as i64)..) {
            *slot = buf[lag.rem_euclid(n as i64) as usize].re * scale;
        }
    }
    out
}

/// Accumulates spectral gradients of both inputs given `grad` `[L, lags]`.
pub(crate) fn correlate_backward(
    fft: &GccPhat,
    xi: &[Vec<Complex64>],
    xj: &[Vec<Complex64>],
    grad: &Tensor,
    eps: f64,
    gxi: &mut [Vec<Complex64>],
    gxj: &mut [Vec<Complex64>],
) {
    let n = fft.len();
    let tau_max = (grad.dim(1) - 1) / 2;
    let scale = 1.0 / n as f64;
    for l in 0..xi.len() {
        let mut gbar = vec![Complex64::new(0.0, 0.0); n];
        for (g, lag) in grad.row(l).iter().zip(-(tau_max as i64)..) {
            gbar[lag.rem_euclid(n as i64) as usize].re += g * scale;
        }
        fft.forward_in_place(&mut gbar);
        for k in 0..n {
            let (a, b) = (xi[l][k], xj[l][k]);
            let c = a * b.conj();
            let m = c.norm();
            let s = 1.0 / (m + eps);
            let mut cbar = gbar[k] * s;
            if m > 0.0 {
                cbar -= c * (s * s / m * (gbar[k] * c.conj()).re);
            }
            gxi[l][k] += cbar * b;
            gxj[l][k] += cbar.conj() * a;
        }
    }
}

/// Real-signal gradient from a spectral gradient, `[L, N]`.
pub(crate) fn spectra_backward(fft: &GccPhat, grad: Vec<Vec<Complex64>>) -> Tensor {
    let n = fft.len();
    let mut out = Tensor::zeros(&[grad.len(), n]);
    for (l, mut g) in grad.into_iter().enumerate() {
        fft.inverse_in_place(&mut g);
        for (o, v) in out.row_mut(l).iter_mut().zip(&g) {
            *o = v.re;
        }
    }
    out
}

/// Channel-wise GCC-PHAT of two `[L, N]` feature maps, `[L, 2 tau_max + 1]`.
pub fn channelwise_gcc(feat_i: &Tensor, feat_j: &Tensor, tau_max: usize, eps: f64) -> Result<Tensor> {
    if feat_i.shape() != feat_j.shape() || feat_i.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "channel-wise GCC needs equal [L, N] inputs, got {:?} and {:?}",
            feat_i.shape(),
            feat_j.shape()
        )));
    }
    let n = feat_i.dim(1);
    if 2 * tau_max >= n {
        return Err(Error::InvalidInput(format!(
            "tau_max {tau_max} must be below half the frame length {n}"
        )));
    }
    let fft = GccPhat::new(n);
    Ok(correlate_spectra(&fft, &spectra(&fft, feat_i), &spectra(&fft, feat_j), tau_max, eps))
}
