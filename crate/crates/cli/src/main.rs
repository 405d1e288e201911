//! `crisp`: the clustered importance sampling pipeline as batch commands
//! over one artifact directory.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

mod commands;
mod config;
mod workdir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use config::ConfigFlags;

/// Invalid flags, configuration or arguments.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "crisp", version, about = "Clustered importance sampling for pretraining data selection")]
struct Cli {
    /// Artifact directory shared by all stages.
    #[arg(long, global = true, env = "CRISP_WORKDIR", default_value = ".")]
    workdir: PathBuf,

    /// Key-value config file (`key = value` per line).
    #[arg(long, global = true, env = "CRISP_CONFIG")]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    run: ConfigFlags,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Read JSONL corpora and cut them into token windows.
    Ingest {
        #[arg(long)]
        generalist: PathBuf,
        #[arg(long)]
        specialist: PathBuf,
        /// Name of the specialist task.
        #[arg(long, default_value = "default")]
        task: String,
    },
    /// Fit tf-idf + LSI on generalist windows and embed both sets.
    EmbedLsi,
    /// Import externally computed EMB1 embeddings for both sets.
    EmbedImport {
        #[arg(long)]
        generalist: PathBuf,
        #[arg(long)]
        specialist: PathBuf,
    },
    /// Train the balanced k-means tree on generalist embeddings.
    ClusterTrain,
    /// Assign both sets to clusters at the selection level.
    Assign,
    /// Estimate both cluster histograms.
    Histogram,
    /// Compute importance weights from the two histograms.
    Weights {
        #[arg(long)]
        specialist: Option<PathBuf>,
        #[arg(long)]
        generalist: Option<PathBuf>,
    },
    /// Mix histograms with the given weights.
    Mix {
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, required = true, value_delimiter = ',')]
        weights: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Draw the resampled window stream into shards.
    Sample {
        /// Target histogram; the specialist histogram by default.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Sample a generic-then-CRISP training schedule, one batch per step.
    Schedule {
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Train the logistic-regression baseline and score generalist windows.
    Classify,
    /// Keep generalist windows scoring above the quantile threshold.
    Filter,
    /// Repetition statistics of the sampled stream.
    Stats,
    /// Distance-to-specialist and per-cluster reports.
    Report {
        #[arg(long, default_value_t = crisp_core::diagnostics::DEFAULT_BINS)]
        bins: usize,
    },
    /// Write a two-domain synthetic corpus with known domain labels.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        generalist_documents: usize,
        #[arg(long, default_value_t = 200)]
        specialist_documents: usize,
        #[arg(long, default_value_t = 0.1)]
        minority_fraction: f64,
        #[arg(long, default_value_t = 64)]
        words_per_document: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some()
        || matches!(err.downcast_ref::<crisp_core::Error>(), Some(crisp_core::Error::Config(_)))
    {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| commands::run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
        Err(_) => ExitCode::from(3),
    }
}
