//! Finite-difference check of the network gradient under the PIT loss.

use std::cell::Cell;

use super::{pit_loss_with_grad, AssignmentMode};
use crate::autodiff::{grad_check, GradCheckReport};
use crate::error::{Error, Result};
use crate::model::NgccModel;
use crate::scene::DatasetFrame;

/// Checks `model.backward` against central differences of the PIT loss on
/// one frame, sampling up to `samples_per_layer` entries per tensor.
///
/// The loss is only differentiable where the minimizing assignment is
/// unique, so the frame is rejected when the minimum is tied or when any
/// probe flips the chosen assignment.
pub fn pit_grad_check(
    model: &NgccModel,
    frame: &DatasetFrame,
    mode: AssignmentMode,
    samples_per_layer: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let tau_max = model.config.tau_max;
    let cache = model.forward_cached(&frame.channels)?;
    let (report, grad) = pit_loss_with_grad(&cache.posterior(tau_max)?, &frame.labels, mode)?;
    let grad = grad.ok_or_else(|| Error::InvalidInput("frame has no events to check against".into()))?;
    if report.tied_pairs > 0 {
        return Err(Error::InvalidInput(format!(
            "assignment minimum is tied on {} pairs",
            report.tied_pairs
        )));
    }
    let analytic = model.backward(&cache, &grad)?;
    let flipped = Cell::new(false);
    let failed = Cell::new(None);
    let mut params = model.params.clone();
    let check = grad_check(
        &mut params,
        &analytic,
        |p| {
            let probe = || -> Result<f64> {
                let m = NgccModel::from_params(model.config.clone(), p.clone())?;
                let (post, _) = m.forward(&frame.channels)?;
                let (r, _) = pit_loss_with_grad(&post, &frame.labels, mode)?;
                if r.chosen_assignment != report.chosen_assignment {
                    flipped.set(true);
                }
                Ok(r.total)
            };
            probe().unwrap_or_else(|e| {
                failed.set(Some(e.to_string()));
                f64::NAN
            })
        },
        samples_per_layer,
        tolerance,
        seed,
    );
    if let Some(e) = failed.take() {
        return Err(Error::Numeric(e));
    }
    if flipped.get() {
        return Err(Error::InvalidInput("a probe changed the minimizing assignment".into()));
    }
    Ok(check)
}
