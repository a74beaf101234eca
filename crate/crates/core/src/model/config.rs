use serde::{Deserialize, Serialize};

use crate::autodiff::Padding;
use crate::error::{Error, Result};
use crate::signal::PHAT_EPSILON;

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Filter-bank channels `L`.
    #[serde(default = "default_filters")]
    pub filters: usize,
    /// Output channels `C` of the correlation head.
    #[serde(default = "default_head_channels")]
    pub head_channels: usize,
    /// Width of the intermediate head layers.
    #[serde(default = "default_head_width")]
    pub head_width: usize,
    /// Output tracks `K`.
    #[serde(default = "default_tracks")]
    pub tracks: usize,
    /// Sinc layer length followed by the remaining filter-bank kernels.
    #[serde(default = "default_filter_lengths")]
    pub filter_lengths: Vec<usize>,
    /// Head kernel lengths over the lag axis.
    #[serde(default = "default_head_kernels")]
    pub head_kernels: Vec<usize>,
    #[serde(default = "default_tau_max")]
    pub tau_max: usize,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_microphones")]
    pub microphones: usize,
    /// Padding of the filter-bank convolutions.
    #[serde(default)]
    pub padding: Padding,
    #[serde(default = "default_epsilon")]
    pub phat_epsilon: f64,
}

fn default_filters() -> usize {
    32
}
fn default_head_channels() -> usize {
    16
}
fn default_head_width() -> usize {
    32
}
fn default_tracks() -> usize {
    3
}
fn default_filter_lengths() -> Vec<usize> {
    vec![101, 11, 9, 7]
}
fn default_head_kernels() -> Vec<usize> {
    vec![5, 5, 3, 1]
}
fn default_tau_max() -> usize {
    6
}
fn default_sample_rate() -> f64 {
    24_000.0
}
fn default_window() -> usize {
    480
}
fn default_microphones() -> usize {
    4
}
fn default_epsilon() -> f64 {
    PHAT_EPSILON
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            filters: default_filters(),
            head_channels: default_head_channels(),
            head_width: default_head_width(),
            tracks: default_tracks(),
            filter_lengths: default_filter_lengths(),
            head_kernels: default_head_kernels(),
            tau_max: default_tau_max(),
            sample_rate: default_sample_rate(),
            window: default_window(),
            microphones: default_microphones(),
            padding: Padding::Circular,
            phat_epsilon: default_epsilon(),
        }
    }
}

impl ModelConfig {
    pub fn pairs(&self) -> usize {
        self.microphones * (self.microphones - 1) / 2
    }

    pub fn lags(&self) -> usize {
        2 * self.tau_max + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("filters", self.filters),
            ("head_channels", self.head_channels),
            ("head_width", self.head_width),
            ("tracks", self.tracks),
            ("tau_max", self.tau_max),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.microphones < 2 {
            return Err(Error::config("microphones", "need at least two"));
        }
        if self.filter_lengths.is_empty() {
            return Err(Error::config("filter_lengths", "needs at least the sinc layer"));
        }
        if self.head_kernels.is_empty() {
            return Err(Error::config("head_kernels", "needs at least one layer"));
        }
        for (field, list) in [("filter_lengths", &self.filter_lengths), ("head_kernels", &self.head_kernels)] {
            if let Some(k) = list.iter().find(|k| **k % 2 == 0) {
                return Err(Error::config(field, format!("kernel length {k} is not odd")));
            }
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if 2 * self.tau_max >= self.window {
            return Err(Error::config("tau_max", "must be below half the window"));
        }
        if !(self.phat_epsilon >= 0.0 && self.phat_epsilon.is_finite()) {
            return Err(Error::config("phat_epsilon", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// Digest of everything that fixes the parameter layout and semantics.
    pub fn arch_hash(&self) -> String {
        crate::hash::json_hash(self)
    }
}
