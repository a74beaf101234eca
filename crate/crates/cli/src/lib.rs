//! The `ngcc` command line: simulate datasets, train, evaluate against the
//! GCC-PHAT baseline, extract features and check gradients.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ngcc_core::Error;

pub use commands::{EvalOptions, ExtractOptions, GradCheckOptions, TrainOptions};
pub use config::ExperimentConfig;

/// Environment variable read for log verbosity (`error` .. `trace`).
pub const LOG_ENV: &str = "NGCC_LOG";

#[derive(Debug, Parser)]
#[command(name = "ngcc", version, about = "Multi-source TDOA estimation with neural GCC-PHAT")]
pub struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Experiment config (JSON).
    #[arg(long, short)]
    pub config: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the configured datasets to disk.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train a network and write a checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset directory; defaults to `<output_dir>/dataset`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides `training.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Check gradients on the first usable frame before training.
        #[arg(long)]
        grad_check: bool,
    },
    /// Score a checkpoint and the GCC-PHAT baseline on a dataset.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory; defaults to the test dataset when present.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; defaults to `<output_dir>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate even when the checkpoint was trained on other data.
        #[arg(long)]
        force: bool,
        /// Write track posteriors of the first N frames as CSV.
        #[arg(long, default_value_t = 0)]
        dump_posteriors: usize,
    },
    /// Compute features for a dataset or a raw recording.
    Extract {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory or channel-major little-endian `f32` file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Compare analytic and finite-difference gradients of the PIT loss.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArg,
        /// Checks this checkpoint instead of a freshly initialized model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        frames: usize,
        /// Entries probed per parameter tensor.
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Process exit code for an error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. } | Error::Json(_)) => 2,
        Some(Error::Numeric(_)) => 3,
        Some(Error::Incompatible(_)) => 4,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    }
    let load = |c: &ConfigArg| ExperimentConfig::load(&c.config);
    match cli.command {
        Command::Simulate { config } => {
            for dir in commands::simulate(&load(&config)?)? {
                println!("{}", dir.display());
            }
        }
        Command::Train {
            config,
            data,
            checkpoint,
            epochs,
            grad_check,
        } => {
            let opts = TrainOptions {
                data,
                checkpoint,
                epochs,
                grad_check,
            };
            println!("{}", commands::train_cmd(&load(&config)?, &opts)?.display());
        }
        Command::Eval {
            config,
            checkpoint,
            data,
            out,
            force,
            dump_posteriors,
        } => {
            let opts = EvalOptions {
                checkpoint,
                data,
                out,
                force,
                dump_posteriors,
            };
            let report = commands::eval(&load(&config)?, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report.overall)?);
        }
        Command::Extract {
            config,
            checkpoint,
            input,
            out,
            force,
        } => {
            let opts = ExtractOptions {
                checkpoint,
                input,
                out,
                force,
            };
            let (path, n) = commands::extract(&load(&config)?, &opts)?;
            println!("{n} features -> {}", path.display());
        }
        Command::Gradcheck {
            config,
            checkpoint,
            data,
            frames,
            samples,
            tolerance,
        } => {
            let opts = GradCheckOptions {
                checkpoint,
                data,
                frames,
                samples,
                tolerance,
            };
            println!("{}", commands::gradcheck(&load(&config)?, &opts)?.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let code = |e: Error| exit_code(&anyhow::Error::from(e));
        assert_eq!(code(Error::Config { field: "x".into(), reason: "y".into() }), 2);
        assert_eq!(code(Error::Numeric("nan".into())), 3);
        assert_eq!(code(Error::Incompatible("hash".into())), 4);
        assert_eq!(code(Error::Format("bad".into())), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["ngcc", "eval", "-c", "x.json", "--dump-posteriors", "5", "--threads", "2"]).unwrap();
        assert_eq!(cli.threads, 2);
        assert!(matches!(cli.command, Command::Eval { dump_posteriors: 5, .. }));
    }
}
