//! Band-pass filter bank parameterized by two cutoff frequencies per filter.
//!
//! Filter `l` is the Hamming-windowed difference of two ideal low-pass
//! impulse responses,
//!
//! ```text
//! g[n] = w[n] * (2 f2 sinc(2 pi f2 n) - 2 f1 sinc(2 pi f1 n))
//! ```
//!
//! with normalized cutoffs `f1 = min(|low|, nyq - MIN_BAND) / fs` and
//! `f2 = min(f1 + MIN_BAND + |band|, nyq) / fs`. Only `low` and `band` are
//! trained.

use super::conv::{conv1d, conv1d_backward, Padding};
use super::Tensor;
use crate::error::{Error, Result};

/// Smallest passband width (Hz).
pub const MIN_BAND_HZ: f64 = 50.0;

/// Lowest edge of the initial mel-spaced grid (Hz).
const INIT_LOW_HZ: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SincLayerParams {
    /// Raw lower-cutoff parameters, `[L]`, in Hz.
    pub low_hz: Tensor,
    /// Raw bandwidth parameters, `[L]`, in Hz.
    pub band_hz: Tensor,
    pub filter_length: usize,
    pub sample_rate: f64,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl SincLayerParams {
    /// `filters` adjacent bands on a mel-spaced grid from 30 Hz to just below
    /// Nyquist.
    pub fn mel_init(filters: usize, filter_length: usize, sample_rate: f64) -> Result<Self> {
        if filters == 0 {
            return Err(Error::config("filters", "must be positive"));
        }
        if filter_length % 2 == 0 {
            return Err(Error::config("sinc_length", "must be odd"));
        }
        let nyquist = sample_rate / 2.0;
        if nyquist <= INIT_LOW_HZ + MIN_BAND_HZ {
            return Err(Error::config("sample_rate", "too low for the sinc filter bank"));
        }
        // top edge kept off the Nyquist clamp so every cutoff starts trainable
        let (lo, hi) = (hz_to_mel(INIT_LOW_HZ), hz_to_mel(nyquist - MIN_BAND_HZ));
        let edges: Vec<f64> = (0..=filters)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / filters as f64))
            .collect();
        let low: Vec<f64> = edges[..filters].to_vec();
        let band: Vec<f64> = edges
            .windows(2)
            .map(|e| (e[1] - e[0] - MIN_BAND_HZ).max(0.0))
            .collect();
        Ok(Self {
            low_hz: Tensor::from_vec(&[filters], low)?,
            band_hz: Tensor::from_vec(&[filters], band)?,
            filter_length,
            sample_rate,
        })
    }

    pub fn filters(&self) -> usize {
        self.low_hz.len()
    }

    fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    /// Effective `(f1, f2)` in Hz for every filter.
    pub fn cutoffs(&self) -> Vec<(f64, f64)> {
        let nyq = self.nyquist();
        self.low_hz
            .data()
            .iter()
            .zip(self.band_hz.data())
            .map(|(&low, &band)| {
                let f1 = low.abs().min(nyq - MIN_BAND_HZ);
                let f2 = (f1 + MIN_BAND_HZ + band.abs()).min(nyq);
                (f1, f2)
            })
            .collect()
    }

    fn window(&self) -> Vec<f64> {
        let len = self.filter_length;
        let half = (len / 2) as i64;
        (-half..=half)
            .map(|n| {
                if len == 1 {
                    1.0
                } else {
                    0.54 + 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
                }
            })
            .collect()
    }

    /// Materialized kernels, `[L, 1, filter_length]`.
    pub fn kernels(&self) -> Tensor {
        let len = self.filter_length;
        let half = (len / 2) as i64;
        let window = self.window();
        let fs = self.sample_rate;
        let mut data = Vec::with_capacity(self.filters() * len);
        for (f1, f2) in self.cutoffs() {
            let (f1, f2) = (f1 / fs, f2 / fs);
            for (n, w) in (-half..=half).zip(&window) {
                let v = if n == 0 {
                    2.0 * (f2 - f1)
                } else {
                    let pn = std::f64::consts::PI * n as f64;
                    ((2.0 * pn * f2).sin() - (2.0 * pn * f1).sin()) / pn
                };
                data.push(w * v);
            }
        }
        Tensor::from_vec(&[self.filters(), 1, len], data).expect("kernel shape")
    }

    /// Chains a gradient w.r.t. the kernels back to `(low_hz, band_hz)`.
    pub fn kernel_backward(&self, grad_kernels: &Tensor) -> (Tensor, Tensor) {
        let len = self.filter_length;
        let half = (len / 2) as i64;
        let window = self.window();
        let fs = self.sample_rate;
        let nyq = self.nyquist();
        let filters = self.filters();
        let mut grad_low = Tensor::zeros(&[filters]);
        let mut grad_band = Tensor::zeros(&[filters]);
        for (l, (f1, f2)) in self.cutoffs().into_iter().enumerate() {
            let g = &grad_kernels.data()[l * len..(l + 1) * len];
            let (n1, n2) = (f1 / fs, f2 / fs);
            // dk/df (per Hz) = +/- 2 w[n] cos(2 pi f n) / fs
            let mut d_f1 = 0.0;
            let mut d_f2 = 0.0;
            for ((n, w), gk) in (-half..=half).zip(&window).zip(g) {
                let pn = 2.0 * std::f64::consts::PI * n as f64;
                d_f2 += gk * 2.0 * w * (pn * n2).cos() / fs;
                d_f1 -= gk * 2.0 * w * (pn * n1).cos() / fs;
            }
            let low = self.low_hz.data()[l];
            let band = self.band_hz.data()[l];
            let f2_free = f1 + MIN_BAND_HZ + band.abs() < nyq;
            let f1_free = low.abs() < nyq - MIN_BAND_HZ;
            let through_f1 = d_f1 + if f2_free { d_f2 } else { 0.0 };
            if f1_free {
                grad_low.data_mut()[l] = through_f1 * sign(low);
            }
            if f2_free {
                grad_band.data_mut()[l] = d_f2 * sign(band);
            }
        }
        (grad_low, grad_band)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Filters a single-channel input `[1, len]` into `[L, len]`.
pub fn sinc_forward(input: &Tensor, params: &SincLayerParams, padding: Padding) -> Result<Tensor> {
    conv1d(input, &params.kernels(), None, padding)
}

/// Gradients w.r.t. `(low_hz, band_hz)`.
pub fn sinc_backward(
    input: &Tensor,
    params: &SincLayerParams,
    grad_out: &Tensor,
    padding: Padding,
) -> Result<(Tensor, Tensor)> {
    let grads = conv1d_backward(input, &params.kernels(), grad_out, padding, false, false)?;
    Ok(params.kernel_backward(&grads.weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, NamedTensors};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::num_complex::Complex64;
    use rustfft::FftPlanner;

    fn single(low: f64, band: f64, len: usize) -> SincLayerParams {
        SincLayerParams {
            low_hz: Tensor::from_vec(&[1], vec![low]).unwrap(),
            band_hz: Tensor::from_vec(&[1], vec![band]).unwrap(),
            filter_length: len,
            sample_rate: 24_000.0,
        }
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn mel_init_is_ordered_and_valid() {
        let p = SincLayerParams::mel_init(32, 101, 24_000.0).unwrap();
        let cut = p.cutoffs();
        assert_eq!(cut.len(), 32);
        for (i, &(f1, f2)) in cut.iter().enumerate() {
            assert!(f1 >= 0.0 && f1 < f2 && f2 <= 12_000.0, "{i}: {f1} {f2}");
        }
        assert!((cut[0].0 - 30.0).abs() < 1e-9);
        assert!((cut[31].1 - (12_000.0 - MIN_BAND_HZ)).abs() < 1e-6);
        assert!(SincLayerParams::mel_init(4, 100, 24_000.0).is_err());
    }

    #[test]
    fn full_band_kernel_is_nearly_all_pass() {
        // low = 0 and the band clamped at Nyquist
        let p = single(0.0, 20_000.0, 101);
        let k = p.kernels();
        let center = 50;
        assert!((k.data()[center] - 1.0).abs() < 1e-12);
        let off: f64 = k.data().iter().enumerate().filter(|(i, _)| *i != center).map(|(_, v)| v.abs()).fold(0.0, f64::max);
        assert!(off < 1e-12, "{off}");

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..480).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = Tensor::from_vec(&[1, 480], x.clone()).unwrap();
        let y = sinc_forward(&input, &p, Padding::Circular).unwrap();
        for (a, b) in y.data().iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn stop_band_attenuates_tone() {
        // [2, 4] kHz band: f1 = 2000, f2 = 2000 + 50 + 1950
        let p = single(2000.0, 1950.0, 101);
        let (f1, f2) = p.cutoffs()[0];
        assert_eq!((f1, f2), (2000.0, 4000.0));

        // frequency-response oracle: DFT of the zero-padded kernel at 1 kHz
        let n = 2400;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (i, v) in p.kernels().data().iter().enumerate() {
            buf[i] = Complex64::new(*v, 0.0);
        }
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let bin_1k = n * 1000 / 24_000;
        let bin_3k = n * 3000 / 24_000;
        assert!(buf[bin_1k].norm() < 0.05, "{}", buf[bin_1k].norm());
        assert!((buf[bin_3k].norm() - 1.0).abs() < 0.05);

        let tone: Vec<f64> = (0..480)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 24_000.0).sin())
            .collect();
        let input = Tensor::from_vec(&[1, 480], tone.clone()).unwrap();
        let y = sinc_forward(&input, &p, Padding::Circular).unwrap();
        assert!(rms(y.data()) < 0.05 * rms(&tone), "{}", rms(y.data()) / rms(&tone));
    }

    #[test]
    fn cutoff_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = SincLayerParams::mel_init(6, 31, 24_000.0).unwrap();
        // move off the grid and flip a sign to exercise |.|
        for v in params.low_hz.data_mut() {
            *v += rng.gen_range(0.0..40.0);
        }
        params.band_hz.data_mut()[2] *= -1.0;
        let x = Tensor::from_vec(&[1, 96], (0..96).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let target = Tensor::from_vec(&[6, 96], (0..576).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();

        let forward = |low: &Tensor, band: &Tensor| {
            let mut p = params.clone();
            p.low_hz = low.clone();
            p.band_hz = band.clone();
            let y = sinc_forward(&x, &p, Padding::Circular).unwrap();
            y.data().iter().zip(target.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (gl, gb) = sinc_backward(&x, &params, &target, Padding::Circular).unwrap();
        let analytic = NamedTensors(vec![("sinc.low_hz".into(), gl), ("sinc.band_hz".into(), gb)]);
        let mut probe = NamedTensors(vec![
            ("sinc.low_hz".into(), params.low_hz.clone()),
            ("sinc.band_hz".into(), params.band_hz.clone()),
        ]);
        let report = grad_check(&mut probe, &analytic, |p| forward(&p.0[0].1, &p.0[1].1), 50, 1e-4, 0);
        assert!(report.passed(), "{report:?}");
    }
}
