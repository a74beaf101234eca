//! Synthetic acoustic scenes with exact TDOA ground truth.
//!
//! Microphone signals are the sum of delayed, attenuated source events
//! (optionally through a shoebox image-source room response) plus white
//! noise. Labels are the rounded path-length differences converted to
//! samples, so a source nearer microphone `i` than microphone `j` gets a
//! negative lag for the pair `(i, j)`.

mod dataset;
mod delay;
mod geometry;
mod render;
mod rir;
pub mod store;

pub use dataset::{
    compat_hash, generate_frame, sample_dataset, select_events, DatasetFrame, DatasetGenerator,
    DatasetSpec, GeometrySpec, RoomSpec, WaveformSpec,
};
pub use delay::{add_delayed, fractional_delay, DEFAULT_HALF_WIDTH};
pub use geometry::{max_tdoa, mic_pairs, tetrahedral_array, true_tdoas, ArrayGeometry, TdoaLabelSet};
pub use render::{render_scene, AcousticScene, Rendered, SourceEvent};
pub use rir::{image_source_count, image_source_rir, image_sources, ImageSource, Room};

/// Speed of sound used when a configuration does not override it (m/s).
pub const SPEED_OF_SOUND: f64 = 343.0;

pub type Point = [f64; 3];

pub(crate) fn distance(a: &Point, b: &Point) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
