use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::TrackPosterior;
use crate::scene::TdoaLabelSet;

/// Whether each microphone pair picks its own best assignment or one
/// assignment is shared by all pairs of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    #[default]
    PerPair,
    Global,
}

/// Track-to-event maps over which the loss is minimized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentSet {
    pub events: usize,
    pub tracks: usize,
    /// `assignments[a][k]` is the event assigned to track `k`.
    pub assignments: Vec<Vec<usize>>,
}

impl AssignmentSet {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// All admissible maps from `k` tracks to `p` events, in lexicographic order.
///
/// With `p <= k` every event must be used at least once (extra tracks carry
/// duplicates); with `p > k` the tracks take `k` distinct events, which
/// covers every `k`-subset in every order. `p = 0` gives the empty set.
pub fn assignment_set(p: usize, k: usize) -> AssignmentSet {
    let mut assignments = Vec::new();
    if p > 0 && k > 0 {
        let mut map = vec![0usize; k];
        loop {
            let mut used = vec![false; p];
            let mut distinct = 0;
            for &e in &map {
                if !used[e] {
                    used[e] = true;
                    distinct += 1;
                }
            }
            if distinct == p.min(k) {
                assignments.push(map.clone());
            }
            // odometer increment, last track fastest
            let mut i = k;
            loop {
                if i == 0 {
                    return AssignmentSet {
                        events: p,
                        tracks: k,
                        assignments,
                    };
                }
                i -= 1;
                map[i] += 1;
                if map[i] < p {
                    break;
                }
                map[i] = 0;
            }
        }
    }
    AssignmentSet {
        events: p,
        tracks: k,
        assignments,
    }
}

/// Mean cross-entropy over tracks of one pair under one assignment.
pub fn assignment_loss(posterior: &TrackPosterior, pair: usize, labels: &[i64], assignment: &[usize]) -> f64 {
    let t = posterior.tau_max as i64;
    let k = assignment.len();
    -assignment
        .iter()
        .enumerate()
        .map(|(track, &e)| posterior.log_probs(pair, track)[(labels[e] + t) as usize])
        .sum::<f64>()
        / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub per_pair: Vec<f64>,
    /// Index into the assignment set chosen for every pair.
    pub chosen_assignment: Vec<usize>,
    pub frames_used: usize,
    pub frames_discarded: usize,
    /// Pairs whose minimum was attained by assignments with different targets.
    pub tied_pairs: usize,
}

/// Losses closer than this are treated as a tie when flagging non-unique
/// minima; the lowest index still wins.
const TIE_TOLERANCE: f64 = 1e-12;

fn check_labels(posterior: &TrackPosterior, labels: &TdoaLabelSet) -> Result<()> {
    if labels.pairs.len() != posterior.pairs() || labels.lags.len() != posterior.pairs() {
        return Err(Error::Shape(format!(
            "{} label pairs for {} posterior pairs",
            labels.pairs.len(),
            posterior.pairs()
        )));
    }
    let events = labels.events();
    let t = posterior.tau_max as i64;
    for lags in &labels.lags {
        if lags.len() != events {
            return Err(Error::InvalidInput("pairs disagree on the number of events".into()));
        }
        if let Some(l) = lags.iter().find(|l| l.abs() > t) {
            return Err(Error::InvalidInput(format!("label lag {l} exceeds tau_max {t}")));
        }
    }
    Ok(())
}

/// Permutation-invariant loss of one frame with the gradient w.r.t. the
/// logits (`[pairs, K, lags]`). Frames without events are reported as
/// discarded with zero loss and no gradient.
pub fn pit_loss_with_grad(
    posterior: &TrackPosterior,
    labels: &TdoaLabelSet,
    mode: AssignmentMode,
) -> Result<(LossReport, Option<Tensor>)> {
    check_labels(posterior, labels)?;
    let pairs = posterior.pairs();
    let k = posterior.tracks();
    let set = assignment_set(labels.events(), k);
    if set.is_empty() {
        return Ok((
            LossReport {
                total: 0.0,
                per_pair: vec![0.0; pairs],
                chosen_assignment: Vec::new(),
                frames_used: 0,
                frames_discarded: 1,
                tied_pairs: 0,
            },
            None,
        ));
    }
    // losses[p][a]
    let losses: Vec<Vec<f64>> = (0..pairs)
        .map(|p| {
            set.assignments
                .iter()
                .map(|a| assignment_loss(posterior, p, &labels.lags[p], a))
                .collect()
        })
        .collect();
    // Assignments that give every track the same lag (repeated labels) are
    // interchangeable, so only ties between different targets count.
    let targets = |p: usize, a: usize| -> Vec<i64> { set.assignments[a].iter().map(|&e| labels.lags[p][e]).collect() };
    let argmin = |values: &[f64], pairs: std::ops::Range<usize>| {
        let mut best = 0;
        for (i, &v) in values.iter().enumerate() {
            if v < values[best] {
                best = i;
            }
        }
        let tied = values.iter().enumerate().any(|(a, &v)| {
            a != best && v - values[best] <= TIE_TOLERANCE && pairs.clone().any(|p| targets(p, a) != targets(p, best))
        });
        (best, tied)
    };
    let (chosen, tied_pairs) = match mode {
        AssignmentMode::PerPair => {
            let picks: Vec<(usize, bool)> = losses.iter().enumerate().map(|(p, l)| argmin(l, p..p + 1)).collect();
            let tied = picks.iter().filter(|(_, t)| *t).count();
            (picks.into_iter().map(|(a, _)| a).collect::<Vec<_>>(), tied)
        }
        AssignmentMode::Global => {
            let sums: Vec<f64> = (0..set.len()).map(|a| losses.iter().map(|l| l[a]).sum()).collect();
            let (a, tied) = argmin(&sums, 0..pairs);
            (vec![a; pairs], if tied { pairs } else { 0 })
        }
    };
    let per_pair: Vec<f64> = chosen.iter().enumerate().map(|(p, &a)| losses[p][a]).collect();
    let total = per_pair.iter().sum::<f64>() / pairs as f64;

    let lags = posterior.lags();
    let t = posterior.tau_max as i64;
    let mut grad = posterior.probs.clone();
    grad.scale(1.0 / (k * pairs) as f64);
    for (p, &a) in chosen.iter().enumerate() {
        for (track, &e) in set.assignments[a].iter().enumerate() {
            let idx = (p * k + track) * lags + (labels.lags[p][e] + t) as usize;
            grad.data_mut()[idx] -= 1.0 / (k * pairs) as f64;
        }
    }
    Ok((
        LossReport {
            total,
            per_pair,
            chosen_assignment: chosen,
            frames_used: 1,
            frames_discarded: 0,
            tied_pairs,
        },
        Some(grad),
    ))
}

pub fn pit_loss(posterior: &TrackPosterior, labels: &TdoaLabelSet, mode: AssignmentMode) -> Result<LossReport> {
    Ok(pit_loss_with_grad(posterior, labels, mode)?.0)
}
