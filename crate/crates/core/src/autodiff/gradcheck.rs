//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Parameters;
use crate::error::{Error, Result};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for the relative error. Below it the comparison is
/// effectively absolute; central differences at `FD_STEP` carry a few
/// 1e-10 of round-off at unit loss scale, so exactly-zero gradients (a
/// bias feeding a softmax) need this much headroom.
const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub layers: Vec<LayerCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn failing_layers(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.max_rel_error >= self.tolerance)
            .map(|l| l.name.as_str())
            .collect()
    }

    /// Turns a failing report into an error naming the offending layers.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let detail: Vec<String> = self
            .layers
            .iter()
            .filter(|l| l.max_rel_error >= self.tolerance)
            .map(|l| {
                format!(
                    "{} (rel err {:.3e} at {}: analytic {:.6e}, numeric {:.6e})",
                    l.name, l.max_rel_error, l.worst_index, l.analytic, l.numeric
                )
            })
            .collect();
        Err(Error::Numeric(format!(
            "gradient check failed at tolerance {:e}: {}",
            self.tolerance,
            detail.join("; ")
        )))
    }
}

pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `loss` on up to
/// `samples_per_layer` randomly chosen entries of every tensor in `params`
/// (all entries when the tensor is smaller). `params` is restored on return.
pub fn grad_check<P, F>(
    params: &mut P,
    analytic: &P,
    mut loss: F,
    samples_per_layer: usize,
    tolerance: f64,
    seed: u64,
) -> GradCheckReport
where
    P: Parameters,
    F: FnMut(&P) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let expected: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();
    let mut layers = Vec::with_capacity(expected.len());
    for (layer, (name, grads)) in expected.iter().enumerate() {
        let len = grads.len();
        let indices = if len <= samples_per_layer {
            (0..len).collect()
        } else {
            sample(&mut rng, len, samples_per_layer).into_vec()
        };
        let mut check = LayerCheck {
            name: name.clone(),
            checked: indices.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in indices {
            let original = params.tensors_mut()[layer].data()[idx];
            params.tensors_mut()[layer].data_mut()[idx] = original + FD_STEP;
            let plus = loss(params);
            params.tensors_mut()[layer].data_mut()[idx] = original - FD_STEP;
            let minus = loss(params);
            params.tensors_mut()[layer].data_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(grads[idx], numeric);
            if err > check.max_rel_error || check.checked == 0 {
                check.max_rel_error = err;
                check.worst_index = idx;
                check.analytic = grads[idx];
                check.numeric = numeric;
            }
        }
        layers.push(check);
    }
    let max_rel_error = layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        layers,
        max_rel_error,
        tolerance,
    }
}
