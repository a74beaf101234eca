//! Paired evaluation of the network and the GCC-PHAT baseline.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decode_tracks, gcc_predictions, score_detailed, DecodeMode, PairDetail, ScoreCard, TdoaPrediction};
use crate::error::{Error, Result};
use crate::model::{NgccModel, TrackPosterior};
use crate::pit::FrameSource;
use crate::scene::TdoaLabelSet;
use crate::signal::GccPhat;

/// Number of peaks the baseline picks per pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakCount {
    /// As many as there are ground-truth events.
    Oracle,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_tolerance")]
    pub tolerance: i64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_peaks")]
    pub baseline_peaks: PeakCount,
}

fn default_tolerance() -> i64 {
    1
}
fn default_threshold() -> f64 {
    0.3
}
fn default_peaks() -> PeakCount {
    PeakCount::Oracle
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            threshold: default_threshold(),
            baseline_peaks: default_peaks(),
        }
    }
}

/// Scores of the three decoders on one set of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Network, event count taken from the ground truth.
    pub model: ScoreCard,
    /// Network, tracks kept above the confidence threshold.
    pub model_threshold: ScoreCard,
    pub baseline: ScoreCard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Comparison,
    /// Keyed by the number of active events.
    pub by_polyphony: BTreeMap<usize, Comparison>,
    pub frames_skipped: usize,
    pub config: EvalConfig,
}

/// Everything decoded for one frame.
pub struct FrameOutcome {
    pub index: usize,
    pub polyphony: usize,
    pub labels: TdoaLabelSet,
    pub posterior: TrackPosterior,
    pub model: TdoaPrediction,
    pub model_threshold: TdoaPrediction,
    pub baseline: TdoaPrediction,
}

fn compare(outcomes: &[&FrameOutcome], tolerance: i64) -> Result<(Comparison, [Vec<PairDetail>; 2])> {
    let ids: Vec<usize> = outcomes.iter().map(|o| o.index).collect();
    let labels: Vec<TdoaLabelSet> = outcomes.iter().map(|o| o.labels.clone()).collect();
    let pick = |f: fn(&FrameOutcome) -> &TdoaPrediction| outcomes.iter().map(|o| f(o).clone()).collect::<Vec<_>>();
    let (model, model_detail) = score_detailed(&ids, &pick(|o| &o.model), &labels, tolerance)?;
    let (model_threshold, _) = score_detailed(&ids, &pick(|o| &o.model_threshold), &labels, tolerance)?;
    let (baseline, baseline_detail) = score_detailed(&ids, &pick(|o| &o.baseline), &labels, tolerance)?;
    Ok((
        Comparison {
            model,
            model_threshold,
            baseline,
        },
        [model_detail, baseline_detail],
    ))
}

/// Runs network and baseline on the same frames. Frames without events
/// are skipped and counted.
pub fn run_frames<S: FrameSource + ?Sized>(
    model: &NgccModel,
    data: &S,
    config: &EvalConfig,
) -> Result<(Vec<FrameOutcome>, usize)> {
    if config.tolerance < 0 {
        return Err(Error::config("tolerance", "must be non-negative"));
    }
    let fft = GccPhat::new(model.config.window);
    let tau_max = model.config.tau_max;
    let outcomes = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let frame = data.frame(i)?;
            if frame.labels.events() == 0 {
                return Ok(None);
            }
            let (posterior, _) = model.forward(&frame.channels)?;
            let events = frame.labels.events();
            let peaks = match config.baseline_peaks {
                PeakCount::Oracle => events,
                PeakCount::Fixed(k) => k,
            };
            Ok(Some(FrameOutcome {
                index: frame.index,
                polyphony: frame.polyphony,
                model: decode_tracks(&posterior, DecodeMode::Count(events)),
                model_threshold: decode_tracks(&posterior, DecodeMode::Threshold(config.threshold)),
                baseline: gcc_predictions(&fft, &frame.channels, &frame.labels.pairs, tau_max, peaks)?,
                labels: frame.labels,
                posterior,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = outcomes.iter().filter(|o| o.is_none()).count();
    Ok((outcomes.into_iter().flatten().collect(), skipped))
}

/// Scores outcomes overall and per polyphony; also returns the per-pair
/// details of the network and the baseline.
pub fn summarize(
    outcomes: &[FrameOutcome],
    skipped: usize,
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<PairDetail>, Vec<PairDetail>)> {
    let all: Vec<&FrameOutcome> = outcomes.iter().collect();
    let (overall, [model_detail, baseline_detail]) = compare(&all, config.tolerance)?;
    let mut by_polyphony = BTreeMap::new();
    let mut counts: Vec<usize> = outcomes.iter().map(|o| o.labels.events()).collect();
    counts.sort_unstable();
    counts.dedup();
    for p in counts {
        let subset: Vec<&FrameOutcome> = outcomes.iter().filter(|o| o.labels.events() == p).collect();
        by_polyphony.insert(p, compare(&subset, config.tolerance)?.0);
    }
    Ok((
        EvalReport {
            overall,
            by_polyphony,
            frames_skipped: skipped,
            config: config.clone(),
        },
        model_detail,
        baseline_detail,
    ))
}

pub fn evaluate<S: FrameSource + ?Sized>(model: &NgccModel, data: &S, config: &EvalConfig) -> Result<EvalReport> {
    let (outcomes, skipped) = run_frames(model, data, config)?;
    Ok(summarize(&outcomes, skipped, config)?.0)
}

/// Baseline alone on labelled multichannel frames.
pub fn gcc_baseline<S: FrameSource + ?Sized>(
    data: &S,
    tau_max: usize,
    peaks: PeakCount,
    tolerance: i64,
) -> Result<ScoreCard> {
    let results = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let frame = data.frame(i)?;
            let n = frame.channels.first().map_or(0, Vec::len);
            let k = match peaks {
                PeakCount::Oracle => frame.labels.events(),
                PeakCount::Fixed(k) => k,
            };
            let pred = gcc_predictions(&GccPhat::new(n), &frame.channels, &frame.labels.pairs, tau_max, k)?;
            Ok((frame.index, pred, frame.labels))
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<usize> = results.iter().map(|r| r.0).collect();
    let preds: Vec<TdoaPrediction> = results.iter().map(|r| r.1.clone()).collect();
    let labels: Vec<TdoaLabelSet> = results.into_iter().map(|r| r.2).collect();
    Ok(score_detailed(&ids, &preds, &labels, tolerance)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::scene::{DatasetGenerator, DatasetSpec};
    use crate::pit::Generated;

    #[test]
    fn baseline_on_single_clean_sources() {
        let spec = DatasetSpec {
            snr_db: Some([20.0, 20.0]),
            ..DatasetSpec::new(200, vec![0.0, 1.0])
        };
        let g = DatasetGenerator::new(spec).unwrap();
        let card = gcc_baseline(&Generated { generator: &g, seed: 1 }, 6, PeakCount::Fixed(1), 1).unwrap();
        assert!(card.recall_at_0 >= 0.95, "{card:?}");
        let none = gcc_baseline(&Generated { generator: &g, seed: 1 }, 6, PeakCount::Fixed(0), 1).unwrap();
        assert_eq!(none.recall_at_1, 0.0);
    }

    #[test]
    fn report_is_split_by_polyphony() {
        let spec = DatasetSpec::new(12, vec![0.25, 0.5, 0.25]);
        let g = DatasetGenerator::new(spec).unwrap();
        let model = NgccModel::new(ModelConfig::default(), 0).unwrap();
        let data = Generated { generator: &g, seed: 2 };
        let report = evaluate(&model, &data, &EvalConfig::default()).unwrap();
        let frames: usize = report.by_polyphony.values().map(|c| c.model.frames).sum();
        assert_eq!(frames + report.frames_skipped, 12);
        assert_eq!(report.overall.model.frames, frames);
        assert!(!report.by_polyphony.contains_key(&0));
        assert_eq!(report.overall.model.frames, report.overall.baseline.frames);
    }
}
