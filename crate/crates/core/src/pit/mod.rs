//! Auxiliary-duplicating permutation invariant loss and training.

mod check;
mod loss;
mod train;

pub use check::pit_grad_check;
pub use loss::{assignment_loss, assignment_set, pit_loss, pit_loss_with_grad, AssignmentMode, AssignmentSet, LossReport};
pub use train::{
    prepare_frame, train, BatchRecord, FrameSource, Generated, OverflowPolicy, TrainConfig, TrainSummary,
};
