//! Multi-source time-difference-of-arrival estimation.
//!
//! The crate is organized bottom-up:
//!
//! - [`signal`]: framing and GCC-PHAT (FFT and direct-sum evaluations).
//! - [`scene`]: microphone arrays, synthetic scene rendering, image-source
//!   reverberation and labeled dataset generation.
//! - [`autodiff`]: the handful of differentiable operators the network needs,
//!   each with an explicit backward pass, plus Adam and gradient checking.
//! - [`model`]: the neural GCC-PHAT network (learnable filter bank,
//!   channel-wise GCC-PHAT, correlation head and track projection).
//! - [`pit`]: auxiliary-duplicating permutation invariant loss and the
//!   single-epoch training loop.
//! - [`eval`]: track decoding, optimal-matching scoring, the GCC-PHAT
//!   peak-picking baseline and least-squares DOA.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `is_multiple_of` is newer than the minimum supported toolchain.
#![allow(unknown_lints, clippy::manual_is_multiple_of)]

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod hash;
pub mod model;
pub mod pit;
pub mod scene;
pub mod signal;

pub use error::{Error, Result};

pub use autodiff::{AdamConfig, GradCheckReport, Padding, SincLayerParams, Tensor};
pub use eval::{ScoreCard, TdoaPrediction};
pub use model::{ModelConfig, ModelParams, NgccModel, TdoaFeature, TrackPosterior};
pub use pit::{AssignmentMode, AssignmentSet, LossReport, TrainConfig};
pub use scene::{AcousticScene, ArrayGeometry, DatasetFrame, DatasetSpec, SourceEvent, TdoaLabelSet};
pub use signal::{CorrelationVector, Frame};
