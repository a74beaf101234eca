use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// How samples beyond the ends of the input are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Wrap around; makes the layer commute exactly with circular shifts.
    #[default]
    Circular,
    Zero,
}

/// Input extended by `taps / 2` samples on each side.
fn pad(x: &[f64], taps: usize, padding: Padding) -> Vec<f64> {
    let len = x.len() as i64;
    let half = (taps / 2) as i64;
    (0..len + taps as i64 - 1)
        .map(|m| {
            let src = m - half;
            match padding {
                Padding::Circular => x[src.rem_euclid(len) as usize],
                Padding::Zero if (0..len).contains(&src) => x[src as usize],
                Padding::Zero => 0.0,
            }
        })
        .collect()
}

fn check_shapes(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if input.shape().len() != 2 || weight.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "conv1d expects input [c_in, len] and weight [c_out, c_in, taps], got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    let (c_in, len) = (input.dim(0), input.dim(1));
    let (c_out, w_in, taps) = (weight.dim(0), weight.dim(1), weight.dim(2));
    if w_in != c_in {
        return Err(Error::Shape(format!("weight expects {w_in} input channels, got {c_in}")));
    }
    if taps % 2 == 0 {
        return Err(Error::Shape(format!("kernel length {taps} must be odd")));
    }
    if len == 0 {
        return Err(Error::Shape("empty input".into()));
    }
    Ok((c_in, c_out, len, taps))
}

/// Dot product with four independent accumulators, which lets the compiler
/// vectorize the reduction.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Same-length cross-correlation:
/// `out[o][n] = bias[o] + sum_c sum_t w[o][c][t] * x[c][n + t - taps/2]`.
pub fn conv1d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, padding: Padding) -> Result<Tensor> {
    let (c_in, c_out, len, taps) = check_shapes(input, weight)?;
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::Shape(format!("bias has {} entries for {c_out} outputs", b.len())));
        }
    }
    let padded: Vec<Vec<f64>> = (0..c_in).map(|c| pad(input.row(c), taps, padding)).collect();
    let w = weight.data();
    let mut out = Tensor::zeros(&[c_out, len]);
    for o in 0..c_out {
        let row = out.row_mut(o);
        if let Some(b) = bias {
            row.fill(b.data()[o]);
        }
        for (c, p) in padded.iter().enumerate() {
            let kernel = &w[(o * c_in + c) * taps..(o * c_in + c + 1) * taps];
            for (t, &k) in kernel.iter().enumerate() {
                for (y, x) in row.iter_mut().zip(&p[t..t + len]) {
                    *y += k * x;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Gradients of [`conv1d`] given the upstream gradient `grad_out`.
pub fn conv1d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    padding: Padding,
    want_input: bool,
    want_bias: bool,
) -> Result<Conv1dGrads> {
    let (c_in, c_out, len, taps) = check_shapes(input, weight)?;
    if grad_out.shape() != [c_out, len] {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match [{c_out}, {len}]",
            grad_out.shape()
        )));
    }
    let padded: Vec<Vec<f64>> = (0..c_in).map(|c| pad(input.row(c), taps, padding)).collect();
    let w = weight.data();
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_padded = if want_input {
        vec![vec![0.0; len + taps - 1]; c_in]
    } else {
        Vec::new()
    };
    for o in 0..c_out {
        let g = grad_out.row(o);
        for c in 0..c_in {
            let base = (o * c_in + c) * taps;
            let p = &padded[c];
            let gw = &mut grad_w.data_mut()[base..base + taps];
            for (t, slot) in gw.iter_mut().enumerate() {
                *slot = dot(g, &p[t..t + len]);
            }
            if want_input {
                let gp = &mut grad_padded[c];
                for (t, &k) in w[base..base + taps].iter().enumerate() {
                    for (acc, gv) in gp[t..t + len].iter_mut().zip(g) {
                        *acc += k * gv;
                    }
                }
            }
        }
    }

    let input_grad = want_input.then(|| {
        let half = (taps / 2) as i64;
        let mut gi = Tensor::zeros(&[c_in, len]);
        for (c, gp) in grad_padded.iter().enumerate() {
            let row = gi.row_mut(c);
            for (m, &v) in gp.iter().enumerate() {
                let src = m as i64 - half;
                match padding {
                    Padding::Circular => row[src.rem_euclid(len as i64) as usize] += v,
                    Padding::Zero if (0..len as i64).contains(&src) => row[src as usize] += v,
                    Padding::Zero => {}
                }
            }
        }
        gi
    });
    let bias_grad = want_bias.then(|| {
        let sums = (0..c_out).map(|o| grad_out.row(o).iter().sum()).collect();
        Tensor::from_vec(&[c_out], sums).expect("bias shape")
    });
    Ok(Conv1dGrads {
        input: input_grad,
        weight: grad_w,
        bias: bias_grad,
    })
}
