//! Subcommand implementations. Each returns the paths it wrote.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use ngcc_core::eval::{run_frames, summarize, write_detail_csv, EvalReport};
use ngcc_core::model::io::{write_features, write_posterior_csv};
use ngcc_core::model::{load_checkpoint, save_checkpoint, CheckpointManifest};
use ngcc_core::pit::{pit_grad_check, prepare_frame, train, FrameSource};
use ngcc_core::scene::store::{decode_f32, write_dataset, write_json, StoredDataset, MANIFEST_FILE};
use ngcc_core::{Error, GradCheckReport, NgccModel, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub grad_check: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub dump_posteriors: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ExtractOptions {
    pub checkpoint: Option<PathBuf>,
    /// A dataset directory, or a raw channel-major `f32` recording.
    pub input: PathBuf,
    pub out: Option<PathBuf>,
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub frames: usize,
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            frames: 1,
            samples: 20,
            tolerance: 1e-4,
        }
    }
}

/// Renders `dataset` and `test_dataset` (whichever are present).
pub fn simulate(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.echo("simulate")?;
    let mut written = Vec::new();
    let splits = [
        (&config.dataset, config.dataset_dir(), config.seed),
        (&config.test_dataset, config.test_dataset_dir(), config.test_seed()),
    ];
    for (spec, dir, seed) in splits {
        let Some(spec) = spec else { continue };
        let manifest = write_dataset(&dir, spec, seed)?;
        info!("wrote {} frames to {}", manifest.frames, dir.display());
        written.push(dir);
    }
    if written.is_empty() {
        return Err(Error::Config {
            field: "dataset".into(),
            reason: "no dataset or test_dataset to simulate".into(),
        });
    }
    Ok(written)
}

fn open_dataset(dir: &Path) -> Result<StoredDataset> {
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(Error::Config {
            field: "dataset".into(),
            reason: format!("{} is not a dataset directory; run `simulate` first", dir.display()),
        });
    }
    StoredDataset::open(dir)
}

/// Fails unless the stored data matches the network's input contract.
fn check_shape(model: &NgccModel, data: &StoredDataset) -> Result<()> {
    let m = data.manifest();
    let c = &model.config;
    if m.window != c.window || m.channels != c.microphones || m.sample_rate != c.sample_rate {
        return Err(Error::Incompatible(format!(
            "dataset has {} channels x {} samples at {} Hz, model expects {} x {} at {} Hz",
            m.channels, m.window, m.sample_rate, c.microphones, c.window, c.sample_rate
        )));
    }
    Ok(())
}

fn check_compat(manifest: &CheckpointManifest, data: &StoredDataset, force: bool) -> Result<()> {
    let expected = data.manifest().compat_hash.as_str();
    match manifest.compat_hash.as_deref() {
        Some(h) if h == expected => Ok(()),
        found => {
            let msg = format!(
                "checkpoint was trained on data with hash {}, dataset has {expected}",
                found.unwrap_or("<none>")
            );
            if force {
                warn!("{msg}; continuing because of --force");
                Ok(())
            } else {
                Err(Error::Incompatible(format!("{msg} (use --force to override)")))
            }
        }
    }
}

#[derive(Serialize)]
struct GradCheckRecord<'a> {
    config_hash: &'a str,
    frames: Vec<usize>,
    reports: Vec<GradCheckReport>,
}

/// Runs the PIT gradient check on the first `frames` frames of `data` with a
/// unique minimizing assignment.
fn check_frames<S: FrameSource + ?Sized>(
    model: &NgccModel,
    config: &ExperimentConfig,
    data: &S,
    opts: &GradCheckOptions,
) -> Result<(Vec<usize>, Vec<GradCheckReport>)> {
    let (mut indices, mut reports) = (Vec::new(), Vec::new());
    for i in 0..data.len() {
        if reports.len() == opts.frames {
            break;
        }
        let frame = prepare_frame(data.frame(i)?, model.config.tracks, config.training.overflow, config.seed);
        let assignment = config.training.assignment;
        match pit_grad_check(model, &frame, assignment, opts.samples, opts.tolerance, config.seed) {
            Ok(report) => {
                info!("frame {i}: max relative error {:.3e}", report.max_rel_error);
                indices.push(i);
                reports.push(report);
            }
            Err(Error::InvalidInput(reason)) => info!("frame {i} skipped: {reason}"),
            Err(e) => return Err(e),
        }
    }
    if reports.is_empty() {
        return Err(Error::InvalidInput("no frame with a unique assignment to check".into()));
    }
    Ok((indices, reports))
}

/// Gradient check of a fresh or trained model; fails with a numeric error
/// when any frame exceeds the tolerance.
pub fn gradcheck(config: &ExperimentConfig, opts: &GradCheckOptions) -> Result<PathBuf> {
    config.echo("gradcheck")?;
    let model = match &opts.checkpoint {
        Some(p) => load_checkpoint(p)?.0,
        None => NgccModel::new(config.model.clone(), config.seed)?,
    };
    let data = open_dataset(&opts.data.clone().unwrap_or_else(|| config.dataset_dir()))?;
    check_shape(&model, &data)?;
    let (frames, reports) = check_frames(&model, config, &data, opts)?;
    let path = config.output_dir.join("gradcheck.json");
    let hash = config.hash();
    write_json(
        &path,
        &GradCheckRecord {
            config_hash: &hash,
            frames,
            reports: reports.clone(),
        },
    )?;
    for r in reports {
        r.into_result()?;
    }
    Ok(path)
}

#[derive(Serialize)]
struct TrainRecord {
    config_hash: String,
    compat_hash: String,
    steps: u64,
    frames_used: usize,
    frames_discarded: usize,
    initial_running_loss: f64,
    final_running_loss: f64,
    checkpoint: PathBuf,
    params_hash: String,
}

/// Trains from the configured seed and writes checkpoint, JSON-lines log
/// and summary.
pub fn train_cmd(config: &ExperimentConfig, opts: &TrainOptions) -> Result<PathBuf> {
    let mut config = config.clone();
    if let Some(e) = opts.epochs {
        config.training.epochs = e;
        config.validate()?;
    }
    config.echo("train")?;
    let data = open_dataset(&opts.data.clone().unwrap_or_else(|| config.dataset_dir()))?;
    let mut model = NgccModel::new(config.model.clone(), config.seed)?;
    check_shape(&model, &data)?;
    if opts.grad_check {
        let (_, reports) = check_frames(&model, &config, &data, &GradCheckOptions::default())?;
        for r in reports {
            r.into_result()?;
        }
    }
    let log_path = config.output_dir.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let summary = train(&mut model, &data, &config.training, config.seed, Some(&mut log))?;
    log.flush()?;
    let ckpt = opts.checkpoint.clone().unwrap_or_else(|| config.checkpoint_path());
    let compat = data.manifest().compat_hash.clone();
    let manifest = save_checkpoint(&ckpt, &model, config.seed, summary.steps, Some(compat.clone()))?;
    info!(
        "{} steps, {} frames used, {} discarded, running loss {:.4} -> {:.4}",
        summary.steps,
        summary.frames_used,
        summary.frames_discarded,
        summary.initial_running_loss,
        summary.final_running_loss
    );
    let path = config.output_dir.join("train_summary.json");
    write_json(
        &path,
        &TrainRecord {
            config_hash: config.hash(),
            compat_hash: compat,
            steps: summary.steps,
            frames_used: summary.frames_used,
            frames_discarded: summary.frames_discarded,
            initial_running_loss: summary.initial_running_loss,
            final_running_loss: summary.final_running_loss,
            checkpoint: ckpt,
            params_hash: manifest.params_hash,
        },
    )?;
    Ok(path)
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    config_hash: String,
    params_hash: &'a str,
    dataset_config_hash: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

/// Scores network and baseline side by side on a stored dataset.
pub fn eval(config: &ExperimentConfig, opts: &EvalOptions) -> Result<EvalReport> {
    config.echo("eval")?;
    let ckpt = opts.checkpoint.clone().unwrap_or_else(|| config.checkpoint_path());
    let (model, manifest) = load_checkpoint(&ckpt)?;
    let dir = opts.data.clone().unwrap_or_else(|| {
        let test = config.test_dataset_dir();
        if test.join(MANIFEST_FILE).exists() {
            test
        } else {
            config.dataset_dir()
        }
    });
    let data = open_dataset(&dir)?;
    check_shape(&model, &data)?;
    check_compat(&manifest, &data, opts.force)?;
    let (outcomes, skipped) = run_frames(&model, &data, &config.evaluation)?;
    let (report, model_detail, baseline_detail) = summarize(&outcomes, skipped, &config.evaluation)?;

    let out = opts.out.clone().unwrap_or_else(|| config.eval_dir());
    fs::create_dir_all(&out)?;
    write_json(
        &out.join("scorecard.json"),
        &EvalRecord {
            config_hash: config.hash(),
            params_hash: &manifest.params_hash,
            dataset_config_hash: &data.manifest().config_hash,
            report: &report,
        },
    )?;
    for (name, detail) in [("model_detail.csv", &model_detail), ("baseline_detail.csv", &baseline_detail)] {
        let mut w = BufWriter::new(File::create(out.join(name))?);
        write_detail_csv(&mut w, detail)?;
        w.flush()?;
    }
    if opts.dump_posteriors > 0 {
        let mut w = BufWriter::new(File::create(out.join("posteriors.csv"))?);
        let picked = outcomes.iter().take(opts.dump_posteriors).map(|o| (o.index, &o.posterior));
        write_posterior_csv(&mut w, picked)?;
        w.flush()?;
    }
    for (p, c) in &report.by_polyphony {
        info!(
            "{p} events: model recall@1 {:.3}, baseline recall@1 {:.3}",
            c.model.recall_at_1, c.baseline.recall_at_1
        );
    }
    Ok(report)
}

/// Writes one feature per frame of a dataset, or per non-overlapping window
/// of a raw recording.
pub fn extract(config: &ExperimentConfig, opts: &ExtractOptions) -> Result<(PathBuf, usize)> {
    config.echo("extract")?;
    let ckpt = opts.checkpoint.clone().unwrap_or_else(|| config.checkpoint_path());
    let (model, manifest) = load_checkpoint(&ckpt)?;
    let features = if opts.input.is_dir() {
        let data = open_dataset(&opts.input)?;
        check_shape(&model, &data)?;
        check_compat(&manifest, &data, opts.force)?;
        data.iter()
            .map(|f| model.feature(&f?.channels))
            .collect::<Result<Vec<_>>>()?
    } else {
        let bytes = fs::read(&opts.input).map_err(|e| Error::Config {
            field: "input".into(),
            reason: format!("cannot read {}: {e}", opts.input.display()),
        })?;
        let samples = decode_f32(&bytes)?;
        let m = model.config.microphones;
        if samples.len() % m != 0 {
            return Err(Error::Format(format!(
                "{} samples do not split into {m} channels",
                samples.len()
            )));
        }
        let n = samples.len() / m;
        let channels: Vec<Vec<f64>> = samples.chunks_exact(n.max(1)).map(<[f64]>::to_vec).collect();
        model.extract_features(&channels)?
    };
    let out = opts.out.clone().unwrap_or_else(|| config.output_dir.join("features.bin"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(&out)?);
    write_features(&mut w, &manifest.params_hash, &features)?;
    w.flush()?;
    Ok((out, features.len()))
}
