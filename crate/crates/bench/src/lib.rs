//! Inputs shared by the benchmarks.

use ngcc_core::scene::{mic_pairs, TdoaLabelSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `channels` rows of uniform noise in `[-1, 1)`.
pub fn noise_channels(channels: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..channels)
        .map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Random lags in `[-tau_max, tau_max]` for `events` events on every pair.
pub fn random_labels(microphones: usize, events: usize, tau_max: i64, seed: u64) -> TdoaLabelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = mic_pairs(microphones);
    let lags = pairs
        .iter()
        .map(|_| (0..events).map(|_| rng.gen_range(-tau_max..=tau_max)).collect())
        .collect();
    TdoaLabelSet { pairs, lags }
}
