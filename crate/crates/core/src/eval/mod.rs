//! Decoding, scoring and the GCC-PHAT baseline.
//!
//! Predictions are matched to ground truth per frame and microphone pair by
//! the one-to-one assignment with the least summed absolute lag error; a
//! truth counts as recalled when its matched prediction is within the
//! tolerance.

mod decode;
mod doa;
mod harness;
mod score;

pub use decode::{decode_tracks, gcc_predictions, DecodeMode, TdoaPrediction};
pub use doa::{angular_error_deg, doa_least_squares};
pub use harness::{
    evaluate, gcc_baseline, run_frames, summarize, Comparison, EvalConfig, EvalReport, FrameOutcome, PeakCount,
};
pub use score::{optimal_match, score, score_detailed, write_detail_csv, PairDetail, PairMatch, ScoreCard};
