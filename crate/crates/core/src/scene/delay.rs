//! Band-limited fractional delays by Hann-windowed sinc interpolation.

use crate::error::{Error, Result};

/// Kernel half width used for scene rendering (taps on each side).
pub const DEFAULT_HALF_WIDTH: usize = 64;

const MIN_HALF_WIDTH: usize = 16;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Accumulates `amplitude * src` delayed by `offset` samples into `dst`.
///
/// `dst[n] += amplitude * sum_m src[m] * h(n - m - offset)` with `h` a
/// Hann-windowed sinc of half width `half_width`. Integer offsets reduce to
/// an exact shift.
pub fn add_delayed(dst: &mut [f64], src: &[f64], offset: f64, amplitude: f64, half_width: usize) {
    let whole = offset.floor();
    let frac = offset - whole;
    let whole = whole as i64;
    let w = half_width as i64;
    let taps: Vec<(i64, f64)> = if frac == 0.0 {
        vec![(0, 1.0)]
    } else {
        (-w + 1..=w)
            .map(|j| {
                let t = j as f64 - frac;
                let window = 0.5 * (1.0 + (std::f64::consts::PI * t / half_width as f64).cos());
                (j, sinc(t) * window)
            })
            .collect()
    };
    let dst_len = dst.len() as i64;
    let src_len = src.len() as i64;
    for (j, k) in taps {
        let gain = amplitude * k;
        let shift = whole + j;
        // n = m + shift must land in [0, dst_len)
        let m_lo = (-shift).max(0);
        let m_hi = (dst_len - shift).min(src_len);
        if m_lo >= m_hi {
            continue;
        }
        let out = &mut dst[(m_lo + shift) as usize..(m_hi + shift) as usize];
        for (o, s) in out.iter_mut().zip(&src[m_lo as usize..m_hi as usize]) {
            *o += gain * s;
        }
    }
}

/// Delays `signal` by a possibly fractional number of samples, keeping its length.
pub fn fractional_delay(signal: &[f64], delay: f64, half_width: usize) -> Result<Vec<f64>> {
    if half_width < MIN_HALF_WIDTH {
        return Err(Error::config(
            "half_width",
            format!("must be at least {MIN_HALF_WIDTH} taps"),
        ));
    }
    if !delay.is_finite() {
        return Err(Error::InvalidInput("delay must be finite".into()));
    }
    let mut out = vec![0.0; signal.len()];
    add_delayed(&mut out, signal, delay, 1.0, half_width);
    Ok(out)
}
