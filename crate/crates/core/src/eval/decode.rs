use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::TrackPosterior;
use crate::signal::{lag_before, top_k_peaks, GccPhat, PHAT_EPSILON};

/// Per pair, up to `K` distinct `(lag, confidence)` estimates ordered by
/// decreasing confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdoaPrediction {
    pub pairs: Vec<Vec<(i64, f64)>>,
}

impl TdoaPrediction {
    pub fn lags(&self, pair: usize) -> Vec<i64> {
        self.pairs[pair].iter().map(|(l, _)| *l).collect()
    }
}

/// How many estimates to keep per pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Every distinct track argmax.
    All,
    /// The `n` most confident.
    Count(usize),
    /// Those with confidence at least the threshold.
    Threshold(f64),
}

fn sort_by_confidence(entries: &mut [(i64, f64)]) {
    entries.sort_by(|a, b| {
        b.1.total_cmp(&a.1).then_with(|| {
            if lag_before(a.0, b.0) {
                std::cmp::Ordering::Less
            } else if lag_before(b.0, a.0) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        })
    });
}

/// Argmax lag of every track; tracks agreeing on a lag are merged keeping
/// the highest probability.
pub fn decode_tracks(posterior: &TrackPosterior, mode: DecodeMode) -> TdoaPrediction {
    let t = posterior.tau_max as i64;
    let pairs = (0..posterior.pairs())
        .map(|pair| {
            let mut entries: Vec<(i64, f64)> = Vec::new();
            for track in 0..posterior.tracks() {
                let probs = posterior.probs(pair, track);
                let mut best = (0i64, probs[t as usize]);
                for (lag, &p) in (-t..=t).zip(probs) {
                    if p > best.1 || (p == best.1 && lag_before(lag, best.0)) {
                        best = (lag, p);
                    }
                }
                match entries.iter_mut().find(|(l, _)| *l == best.0) {
                    Some(e) => e.1 = e.1.max(best.1),
                    None => entries.push(best),
                }
            }
            sort_by_confidence(&mut entries);
            match mode {
                DecodeMode::All => {}
                DecodeMode::Count(n) => entries.truncate(n),
                DecodeMode::Threshold(theta) => entries.retain(|(_, c)| *c >= theta),
            }
            entries
        })
        .collect();
    TdoaPrediction { pairs }
}

/// Plain GCC-PHAT peak picking on every pair; `counts[p]` peaks for pair
/// `p`. Confidences are the correlation values clamped into `(0, 1]`.
pub fn gcc_predictions(
    fft: &GccPhat,
    channels: &[Vec<f64>],
    pairs: &[(usize, usize)],
    tau_max: usize,
    peaks: usize,
) -> Result<TdoaPrediction> {
    let pairs = pairs
        .iter()
        .map(|&(i, j)| {
            if peaks == 0 {
                return Ok(Vec::new());
            }
            let corr = fft.correlate(&channels[i], &channels[j], tau_max, PHAT_EPSILON)?;
            Ok(top_k_peaks(&corr, peaks)
                .into_iter()
                .map(|(lag, v)| (lag, v.clamp(f64::MIN_POSITIVE, 1.0)))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TdoaPrediction { pairs })
}
