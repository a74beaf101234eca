//! One-epoch training with Adam.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pit_loss_with_grad, AssignmentMode};
use crate::autodiff::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::model::{ModelParams, NgccModel};
use crate::scene::store::StoredDataset;
use crate::scene::{select_events, DatasetFrame, DatasetGenerator};

/// What to do with frames holding more events than the model has tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// Keep a random subset of `K` events, drawn when the frame is loaded.
    #[default]
    RandomSubset,
    /// Keep every event and minimize over all `K`-subsets in the loss.
    SubsetMinimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub assignment: AssignmentMode,
    #[serde(default)]
    pub overflow: OverflowPolicy,
}

fn default_epochs() -> usize {
    1
}
fn default_batch() -> usize {
    32
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            adam: AdamConfig::default(),
            assignment: AssignmentMode::default(),
            overflow: OverflowPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) {
            return Err(Error::config("adam.lr", "must be finite and non-negative"));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::config("adam.beta", "betas must lie in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(Error::config("adam.eps", "must be positive"));
        }
        Ok(())
    }
}

/// Random-access frames for training and evaluation.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn frame(&self, index: usize) -> Result<DatasetFrame>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for StoredDataset {
    fn len(&self) -> usize {
        StoredDataset::len(self)
    }
    fn frame(&self, index: usize) -> Result<DatasetFrame> {
        StoredDataset::frame(self, index)
    }
}

impl FrameSource for [DatasetFrame] {
    fn len(&self) -> usize {
        <[DatasetFrame]>::len(self)
    }
    fn frame(&self, index: usize) -> Result<DatasetFrame> {
        Ok(self[index].clone())
    }
}

/// Frames rendered on demand from a generator and a seed.
pub struct Generated<'a> {
    pub generator: &'a DatasetGenerator,
    pub seed: u64,
}

impl FrameSource for Generated<'_> {
    fn len(&self) -> usize {
        self.generator.spec().frames
    }
    fn frame(&self, index: usize) -> Result<DatasetFrame> {
        self.generator.frame(self.seed, index)
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub frames: usize,
    pub discarded: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub frames_used: usize,
    pub frames_discarded: usize,
    /// Mean loss over the first and last tenth of the updates.
    pub initial_running_loss: f64,
    pub final_running_loss: f64,
    pub history: Vec<BatchRecord>,
}

/// Applies the overflow policy to a freshly loaded frame.
pub fn prepare_frame(mut frame: DatasetFrame, tracks: usize, policy: OverflowPolicy, seed: u64) -> DatasetFrame {
    if policy == OverflowPolicy::RandomSubset && frame.labels.events() > tracks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e1e_c7ed);
        rng.set_stream(frame.index as u64);
        frame.labels = select_events(&frame.labels, tracks, &mut rng);
    }
    frame
}

struct FrameResult {
    loss: f64,
    used: bool,
    grads: Option<ModelParams>,
}

fn frame_step(model: &NgccModel, frame: &DatasetFrame, mode: AssignmentMode) -> Result<FrameResult> {
    let cache = model.forward_cached(&frame.channels)?;
    let posterior = cache.posterior(model.config.tau_max)?;
    let (report, grad) = pit_loss_with_grad(&posterior, &frame.labels, mode)?;
    Ok(match grad {
        None => FrameResult {
            loss: 0.0,
            used: false,
            grads: None,
        },
        Some(g) => FrameResult {
            loss: report.total,
            used: true,
            grads: Some(model.backward(&cache, &g)?),
        },
    })
}

fn non_finite(step: u64, batch: usize, what: &str, params: &ModelParams) -> Error {
    let norms: Vec<String> = params.norms().into_iter().map(|(n, v)| format!("{n}={v:.4e}")).collect();
    Error::Numeric(format!(
        "{what} at step {step} (batch {batch}); parameter norms: {}",
        norms.join(", ")
    ))
}

/// Trains `model` in place for `config.epochs` passes over `data` in index
/// order, writing one [`BatchRecord`] per batch to `log`.
///
/// Per-frame work runs on the rayon pool; gradients are summed in frame
/// order, so the result does not depend on the number of threads.
pub fn train<S: FrameSource + ?Sized>(
    model: &mut NgccModel,
    data: &S,
    config: &TrainConfig,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainSummary> {
    config.validate()?;
    let mut adam = Adam::new(config.adam, &model.params);
    let mut history = Vec::new();
    let (mut used_total, mut discarded_total) = (0, 0);
    let tracks = model.config.tracks;
    for epoch in 0..config.epochs {
        let starts: Vec<usize> = (0..data.len()).step_by(config.batch_size).collect();
        for (batch, &start) in starts.iter().enumerate() {
            let end = (start + config.batch_size).min(data.len());
            let results = (start..end)
                .into_par_iter()
                .map(|i| {
                    let frame = prepare_frame(data.frame(i)?, tracks, config.overflow, seed);
                    frame_step(model, &frame, config.assignment)
                })
                .collect::<Result<Vec<_>>>()?;
            let used = results.iter().filter(|r| r.used).count();
            let discarded = results.len() - used;
            used_total += used;
            discarded_total += discarded;
            let step = adam.steps() + 1;
            if used == 0 {
                history.push(BatchRecord {
                    step: adam.steps(),
                    epoch,
                    loss: 0.0,
                    frames: 0,
                    discarded,
                    lr: config.adam.lr,
                });
                continue;
            }
            let mut grads = model.params.zeros_like();
            let mut loss = 0.0;
            for r in &results {
                if let Some(g) = &r.grads {
                    grads.add_assign(g);
                    loss += r.loss;
                }
            }
            loss /= used as f64;
            grads.scale(1.0 / used as f64);
            if !loss.is_finite() {
                return Err(non_finite(step, batch, "non-finite loss", &model.params));
            }
            if grads.check_finite().is_err() {
                return Err(non_finite(step, batch, "non-finite gradient", &model.params));
            }
            adam.step(&mut model.params, &grads);
            if model.params.check_finite().is_err() {
                return Err(non_finite(step, batch, "non-finite parameters", &model.params));
            }
            let record = BatchRecord {
                step,
                epoch,
                loss,
                frames: used,
                discarded,
                lr: config.adam.lr,
            };
            if let Some(out) = log.as_deref_mut() {
                serde_json::to_writer(&mut *out, &record)?;
                out.write_all(b"\n")?;
            }
            history.push(record);
        }
    }
    let updates: Vec<f64> = history.iter().filter(|r| r.frames > 0).map(|r| r.loss).collect();
    let tenth = (updates.len() / 10).max(1);
    let mean = |s: &[f64]| if s.is_empty() { f64::NAN } else { s.iter().sum::<f64>() / s.len() as f64 };
    Ok(TrainSummary {
        steps: adam.steps(),
        frames_used: used_total,
        frames_discarded: discarded_total,
        initial_running_loss: mean(&updates[..tenth.min(updates.len())]),
        final_running_loss: mean(&updates[updates.len().saturating_sub(tenth)..]),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::scene::DatasetSpec;

    fn small_model(seed: u64) -> NgccModel {
        let config = ModelConfig {
            filters: 4,
            head_channels: 4,
            head_width: 6,
            filter_lengths: vec![31, 5, 3],
            head_kernels: vec![5, 3, 1],
            ..Default::default()
        };
        NgccModel::new(config, seed).unwrap()
    }

    fn frames(n: usize, polyphony: Vec<f64>) -> Vec<DatasetFrame> {
        let spec = DatasetSpec::new(n, polyphony);
        let g = DatasetGenerator::new(spec).unwrap();
        (0..n).map(|i| g.frame(3, i).unwrap()).collect()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = frames(6, vec![0.0, 0.5, 0.5]);
        let mut model = small_model(1);
        let before = model.params.clone();
        let config = TrainConfig {
            batch_size: 2,
            adam: AdamConfig { lr: 0.0, ..Default::default() },
            ..Default::default()
        };
        let summary = train(&mut model, data.as_slice(), &config, 0, None).unwrap();
        assert_eq!(summary.steps, 3);
        assert_eq!(model.params, before);
    }

    #[test]
    fn deterministic_and_logs_every_batch() {
        let data = frames(10, vec![0.2, 0.4, 0.4]);
        let config = TrainConfig {
            batch_size: 4,
            ..Default::default()
        };
        let mut a = small_model(2);
        let mut b = small_model(2);
        let mut log = Vec::new();
        let sa = train(&mut a, data.as_slice(), &config, 7, Some(&mut log)).unwrap();
        let sb = train(&mut b, data.as_slice(), &config, 7, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(sa, sb);
        assert_eq!(sa.frames_used + sa.frames_discarded, 10);
        let lines: Vec<BatchRecord> = String::from_utf8(log)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines, sa.history.iter().filter(|r| r.frames > 0).cloned().collect::<Vec<_>>());
    }

    #[test]
    fn thread_count_does_not_change_the_result() {
        let data = frames(8, vec![0.0, 0.5, 0.5]);
        let config = TrainConfig {
            batch_size: 8,
            ..Default::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let mut m = small_model(3);
            pool.install(|| train(&mut m, data.as_slice(), &config, 0, None).unwrap());
            m.params
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn random_subset_keeps_k_events() {
        let data = frames(4, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        for f in data {
            let kept = prepare_frame(f.clone(), 3, OverflowPolicy::RandomSubset, 9);
            assert_eq!(kept.labels.events(), 3);
            assert_eq!(prepare_frame(f.clone(), 3, OverflowPolicy::RandomSubset, 9), kept);
            assert_eq!(prepare_frame(f.clone(), 3, OverflowPolicy::SubsetMinimum, 9).labels.events(), 5);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let data = frames(1, vec![0.0, 1.0]);
        let mut m = small_model(4);
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(matches!(train(&mut m, data.as_slice(), &bad, 0, None), Err(Error::Config { .. })));
    }

    #[test]
    fn non_finite_input_aborts_with_diagnostics() {
        let mut data = frames(2, vec![0.0, 1.0]);
        data[1].channels[0][5] = f64::NAN;
        let mut m = small_model(5);
        let config = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        let err = train(&mut m, data.as_slice(), &config, 0, None).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
        let msg = err.to_string();
        assert!(msg.contains("step 2") && msg.contains("fb1.weight="), "{msg}");
    }
}
