//! `acseg` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
//! violation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] acseg::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Data(acseg::Error::InvalidConfig(_)) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "acseg", version, about = "Auto-context facade segmentation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Configuration file with one `key = value` per line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a stacked model from a manifest of images or point clouds.
    Train {
        /// Lines of `image.png label.png` or `cloud.ply`, relative to the manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        /// Also write the training report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Label images (`.png`) or point clouds (`.ply`) with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Stage whose output is used (1-based); defaults to the last.
        #[arg(long)]
        stage: Option<usize>,
        /// Potts smoothing weight, or `auto` for the weight tuned at training time.
        #[arg(long)]
        crf: Option<String>,
        /// Also write every stage's class probabilities.
        #[arg(long)]
        dump_probs: bool,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Compare predicted and ground-truth label rasters with matching file names.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Potts smoothing of a probability dump.
    Crf {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        lambda: f64,
        /// Label raster (grid input) or labelled cloud (point input).
        #[arg(long)]
        out: PathBuf,
        /// Point cloud providing the neighbour graph for point input.
        #[arg(long)]
        cloud: Option<PathBuf>,
    },
    /// Combine image-based and point-based probabilities for the same points.
    Fuse {
        #[arg(long)]
        p2d: PathBuf,
        #[arg(long)]
        p3d: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `mean` or `product`.
        #[arg(long, default_value = "mean")]
        mode: String,
        /// One 0/1 per line; points marked 0 keep their point-based distribution.
        #[arg(long)]
        coverage: Option<PathBuf>,
    },
    /// Write a synthetic facade corpus with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Points per square meter; 0 skips point clouds.
        #[arg(long, default_value_t = 40.0)]
        density: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = &cli.common;
    let mut cfg = config::RunConfig::load(common.config.as_deref(), &common.set)?;
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Train { manifest, model, report } => commands::train(&cfg, &manifest, &model, report.as_deref()),
        Command::Predict { model, out, stage, crf, dump_probs, inputs } => {
            commands::predict(&cfg, &model, &out, stage, crf.as_deref(), dump_probs, &inputs)
        }
        Command::Eval { pred, truth, report } => commands::eval(&cfg, &pred, &truth, report.as_deref()),
        Command::Crf { probs, lambda, out, cloud } => commands::crf(&cfg, &probs, lambda, &out, cloud.as_deref()),
        Command::Fuse { p2d, p3d, out, mode, coverage } => commands::fuse(&p2d, &p3d, &out, &mode, coverage.as_deref()),
        Command::Synth { out, count, seed, density } => commands::synth(&cfg, &out, count, seed, density),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
