//! The neural GCC-PHAT network: a learnable filter bank shared by all
//! microphones, GCC-PHAT per filter channel and microphone pair, a small
//! convolutional head over the lag axis shared by all pairs, and a 1-tap
//! projection to `K` per-track lag posteriors.

mod config;
mod gcc;
pub mod io;
mod network;
mod params;

pub use config::ModelConfig;
pub use gcc::channelwise_gcc;
pub use io::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use network::{ForwardCache, NgccModel, TdoaFeature, TrackPosterior};
pub use params::ModelParams;

#[cfg(test)]
mod tests;
