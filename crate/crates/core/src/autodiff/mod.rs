//! Differentiable building blocks with hand-written backward passes.
//!
//! There is no tape: each operator exposes a forward function and a
//! matching backward function, and the network in [`crate::model`] chains
//! them in reverse order.

mod activation;
mod adam;
mod conv;
mod gradcheck;
mod sinc;
mod softmax;
mod tensor;

pub use activation::{leaky_relu, leaky_relu_backward, LEAKY_SLOPE};
pub use adam::{adam_step, Adam, AdamConfig};
pub use conv::{conv1d, conv1d_backward, Conv1dGrads, Padding};
pub use gradcheck::{grad_check, GradCheckReport, LayerCheck, FD_STEP};
pub use sinc::{sinc_backward, sinc_forward, SincLayerParams, MIN_BAND_HZ};
pub use softmax::{log_softmax, softmax, softmax_xent};
pub use tensor::{NamedTensors, Parameters, Tensor};
