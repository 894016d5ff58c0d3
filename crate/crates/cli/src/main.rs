//! `textsr`: prepare data, train, evaluate, super-resolve and score.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use textsr_core::{Error, Subset};

#[derive(Debug, Parser)]
#[command(name = "textsr", version, about = "Scene-text image super-resolution toolkit")]
struct Cli {
    /// Overrides the seed from the config file (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    force: bool,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a pair manifest from annotations, or render a toy dataset.
    Prepare(PrepareArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Recognition accuracy for bicubic, SR and HR images.
    Eval(EvalArgs),
    /// Super-resolve one image or a directory of images.
    Infer(InferArgs),
    /// PSNR and SSIM per subset against the HR images.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    /// JSONL annotation file; image paths are relative to it.
    #[arg(long, conflicts_with = "toy", required_unless_present = "toy")]
    pub annotations: Option<PathBuf>,
    /// Render this many toy pairs instead of reading annotations.
    #[arg(long)]
    pub toy: Option<usize>,
    /// Subsets the toy pairs are spread over.
    #[arg(long, value_delimiter = ',', default_value = "train")]
    pub subsets: Vec<Subset>,
    /// Manifest file for annotations, output directory for toy data.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Key-value experiment config; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory receiving the checkpoint and the loss log.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Overrides `max_steps` from the config.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
    /// `toy` for the built-in reader, or a shell command speaking the
    /// path-in/line-out protocol.
    #[arg(long, default_value = "toy")]
    pub recognizer: String,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Refuse checkpoints whose model config differs from this file's.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory; file names mirror the inputs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Score this model's output; bicubic upsampling when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

pub struct Global {
    pub seed: Option<u64>,
    pub force: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_numerical() => 3,
        Error::ConfigParse { .. } | Error::ConfigInvalid { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_target(false)
        .init();
    let g = Global {
        seed: cli.seed,
        force: cli.force,
    };
    let result = match &cli.command {
        Command::Prepare(a) => commands::prepare(a, &g),
        Command::Train(a) => commands::train(a, &g),
        Command::Eval(a) => commands::eval(a, &g),
        Command::Infer(a) => commands::infer(a, &g),
        Command::Metrics(a) => commands::metrics(a, &g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
