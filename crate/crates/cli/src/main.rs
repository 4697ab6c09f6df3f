//! Batch pipeline driver: data generation, training, evaluation,
//! cross-day fine-tuning, ratio sweeps, ablation, and energy reports.
//!
//! Exit codes: 0 success, 2 usage error, 3 configuration or validation
//! error, 4 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfsnn_core::Error;

#[derive(Parser)]
#[command(
    name = "mfsnn",
    version,
    about = "Spiking neural network decoding toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Produce a synthetic multi-day dataset directory.
    Generate {
        /// Fixture family: grasp-touch or center-out.
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
        /// JSON file of generator keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// KEY=VALUE override; unknown keys are rejected.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train a decoder on one day, holding out a test fraction.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Decoder: mfsnn, mfann, or mlp.
        #[arg(long, default_value = "mfsnn")]
        model: String,
        #[arg(long, default_value_t = 0)]
        day: u16,
        /// Held-out fraction of the day (0 trains on everything).
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Score a checkpoint on a day (or its held-out split).
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        day: u16,
        /// Re-derives the train command's split; 0 scores the whole day.
        #[arg(long, default_value_t = 0.0)]
        holdout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a pre-trained checkpoint on a labeled fraction of a day and
    /// score the remainder.
    Finetune {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        day: u16,
        #[arg(long)]
        ratio: f64,
        /// classifier_only or full.
        #[arg(long)]
        scope: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Accuracy as a function of the fine-tuning ratio.
    SweepRatio {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        train_day: u16,
        #[arg(long)]
        test_day: u16,
        /// Comma-separated ratios in [0, 1); defaults to the standard grid.
        #[arg(long)]
        ratios: Option<String>,
        /// Comma-separated seeds; defaults to --seed alone.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value = "mfsnn")]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train and score the full model and its three single-branch
    /// ablations under identical splits and seeds.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        train_day: u16,
        #[arg(long)]
        test_day: u16,
        #[arg(long, default_value_t = 0.078)]
        ratio: f64,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Per-layer synaptic-operation energy report for a spiking
    /// checkpoint, with the dense-twin comparison.
    Energy {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Needed to measure firing rates (omit with --uniform-rate).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Count the readout layer in both totals.
        #[arg(long, default_value_t = false)]
        include_classifier: bool,
        /// Skip measurement and assume this rate for every layer.
        #[arg(long)]
        uniform_rate: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> mfsnn_core::Result<()> {
    match cli.command {
        Command::Generate {
            preset,
            seed,
            out,
            config,
            set,
        } => commands::generate(&preset, seed, &out, config.as_deref(), &set),
        Command::Train {
            dataset,
            model,
            day,
            holdout,
            seed,
            out,
            config,
            set,
        } => commands::cmd_train(
            &dataset,
            &model,
            day,
            holdout,
            seed,
            &out,
            config.as_deref(),
            &set,
        ),
        Command::Eval {
            dataset,
            checkpoint,
            day,
            holdout,
            seed,
            out,
        } => commands::cmd_eval(&dataset, &checkpoint, day, holdout, seed, &out),
        Command::Finetune {
            dataset,
            checkpoint,
            day,
            ratio,
            scope,
            seed,
            out,
            config,
            set,
        } => commands::cmd_finetune(
            &dataset,
            &checkpoint,
            day,
            ratio,
            scope.as_deref(),
            seed,
            &out,
            config.as_deref(),
            &set,
        ),
        Command::SweepRatio {
            dataset,
            train_day,
            test_day,
            ratios,
            seeds,
            model,
            seed,
            out,
            config,
            set,
        } => commands::cmd_sweep_ratio(
            &dataset,
            train_day,
            test_day,
            ratios.as_deref(),
            seeds.as_deref(),
            &model,
            seed,
            &out,
            config.as_deref(),
            &set,
        ),
        Command::Ablate {
            dataset,
            train_day,
            test_day,
            ratio,
            seeds,
            seed,
            out,
            config,
            set,
        } => commands::cmd_ablate(
            &dataset,
            train_day,
            test_day,
            ratio,
            seeds.as_deref(),
            seed,
            &out,
            config.as_deref(),
            &set,
        ),
        Command::Energy {
            checkpoint,
            dataset,
            include_classifier,
            uniform_rate,
            out,
        } => commands::cmd_energy(
            &checkpoint,
            dataset.as_deref(),
            include_classifier,
            uniform_rate,
            &out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            // 3 for anything the user can fix in flags, configs, or input
            // files; 4 for environment failures.
            match err {
                Error::Io(_) => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}
