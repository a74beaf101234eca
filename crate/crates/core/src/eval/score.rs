use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TdoaPrediction;
use crate::error::{Error, Result};
use crate::scene::TdoaLabelSet;

/// Aggregate TDOA recall over frames, pairs and ground-truth events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    /// Fraction of truths matched within one lag (more generally, within
    /// `tolerance`).
    pub recall_at_1: f64,
    pub recall_at_0: f64,
    /// Mean absolute error over matched truth/prediction couples.
    pub mean_abs_lag_error: f64,
    pub frames: usize,
    pub truths: usize,
    pub predictions: usize,
    pub tolerance: i64,
}

/// Optimal matching of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatch {
    /// `(truth index, prediction index)` couples.
    pub couples: Vec<(usize, usize)>,
    pub total_abs_error: i64,
}

/// One-to-one matching between `truths` and `preds` minimizing the summed
/// absolute error over all couplings of size `min(|truths|, |preds|)`.
/// Among equal totals, more exact hits win, then the first enumerated.
pub fn optimal_match(truths: &[i64], preds: &[i64]) -> PairMatch {
    let (small, large, swapped) = if truths.len() <= preds.len() {
        (truths, preds, false)
    } else {
        (preds, truths, true)
    };
    let mut best: Option<(i64, usize, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(small.len());
    let mut used = vec![false; large.len()];
    fn search(
        small: &[i64],
        large: &[i64],
        current: &mut Vec<usize>,
        used: &mut [bool],
        best: &mut Option<(i64, usize, Vec<usize>)>,
    ) {
        if current.len() == small.len() {
            let err: i64 = current.iter().enumerate().map(|(s, &l)| (small[s] - large[l]).abs()).sum();
            let exact = current.iter().enumerate().filter(|(s, &l)| small[*s] == large[l]).count();
            let better = match best {
                None => true,
                Some((e, x, _)) => err < *e || (err == *e && exact > *x),
            };
            if better {
                *best = Some((err, exact, current.clone()));
            }
            return;
        }
        for l in 0..large.len() {
            if !used[l] {
                used[l] = true;
                current.push(l);
                search(small, large, current, used, best);
                current.pop();
                used[l] = false;
            }
        }
    }
    search(small, large, &mut current, &mut used, &mut best);
    let (total, _, map) = best.unwrap_or((0, 0, Vec::new()));
    let couples = map
        .into_iter()
        .enumerate()
        .map(|(s, l)| if swapped { (l, s) } else { (s, l) })
        .collect();
    PairMatch {
        couples,
        total_abs_error: total,
    }
}

/// Per frame and pair scoring detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDetail {
    pub frame: usize,
    pub pair: usize,
    pub true_lags: Vec<i64>,
    pub pred_lags: Vec<i64>,
    /// Truths matched within tolerance.
    pub matched: usize,
    pub abs_err: i64,
}

#[derive(Debug, Default, Clone)]
struct Tally {
    frames: usize,
    truths: usize,
    predictions: usize,
    within: usize,
    exact: usize,
    couples: usize,
    abs_error: i64,
}

/// Scores aligned prediction and label streams. `frame_ids` name the
/// frames in the detail rows.
pub fn score_detailed(
    frame_ids: &[usize],
    predictions: &[TdoaPrediction],
    labels: &[TdoaLabelSet],
    tolerance: i64,
) -> Result<(ScoreCard, Vec<PairDetail>)> {
    if predictions.len() != labels.len() || frame_ids.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} label sets and {} frame ids",
            predictions.len(),
            labels.len(),
            frame_ids.len()
        )));
    }
    if tolerance < 0 {
        return Err(Error::config("tolerance", "must be non-negative"));
    }
    let mut tally = Tally::default();
    let mut details = Vec::new();
    for ((&frame, pred), truth) in frame_ids.iter().zip(predictions).zip(labels) {
        if pred.pairs.len() != truth.lags.len() {
            return Err(Error::Shape(format!(
                "frame {frame}: {} predicted pairs for {} labelled pairs",
                pred.pairs.len(),
                truth.lags.len()
            )));
        }
        tally.frames += 1;
        for (pair, true_lags) in truth.lags.iter().enumerate() {
            let pred_lags = pred.lags(pair);
            let m = optimal_match(true_lags, &pred_lags);
            let mut matched = 0;
            for &(t, p) in &m.couples {
                let e = (true_lags[t] - pred_lags[p]).abs();
                if e <= tolerance {
                    matched += 1;
                }
                if e == 0 {
                    tally.exact += 1;
                }
            }
            tally.truths += true_lags.len();
            tally.predictions += pred_lags.len();
            tally.within += matched;
            tally.couples += m.couples.len();
            tally.abs_error += m.total_abs_error;
            details.push(PairDetail {
                frame,
                pair,
                true_lags: true_lags.clone(),
                pred_lags,
                matched,
                abs_err: m.total_abs_error,
            });
        }
    }
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    Ok((
        ScoreCard {
            recall_at_1: ratio(tally.within, tally.truths),
            recall_at_0: ratio(tally.exact, tally.truths),
            mean_abs_lag_error: if tally.couples == 0 {
                0.0
            } else {
                tally.abs_error as f64 / tally.couples as f64
            },
            frames: tally.frames,
            truths: tally.truths,
            predictions: tally.predictions,
            tolerance,
        },
        details,
    ))
}

pub fn score(predictions: &[TdoaPrediction], labels: &[TdoaLabelSet], tolerance: i64) -> Result<ScoreCard> {
    let ids: Vec<usize> = (0..labels.len()).collect();
    Ok(score_detailed(&ids, predictions, labels, tolerance)?.0)
}

fn join(lags: &[i64]) -> String {
    lags.iter().map(i64::to_string).collect::<Vec<_>>().join(";")
}

/// CSV `frame,pair,true_lags,pred_lags,matched,abs_err`; lag lists are
/// `;`-separated.
pub fn write_detail_csv<W: Write>(out: &mut W, details: &[PairDetail]) -> Result<()> {
    writeln!(out, "frame,pair,true_lags,pred_lags,matched,abs_err")?;
    for d in details {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            d.frame,
            d.pair,
            join(&d.true_lags),
            join(&d.pred_lags),
            d.matched,
            d.abs_err
        )?;
    }
    Ok(())
}
