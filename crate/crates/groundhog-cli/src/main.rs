//! `groundhog` — grounded language modeling on synthetic scenes.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or schema error,
//! 3 numeric failure (training aborts on the first non-finite value).
//! `GROUNDHOG_LOG` ∈ {error, info, debug} sets stderr log verbosity and
//! never changes command output.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod ops;
mod ppm;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<groundhog::Error> for CliError {
    fn from(e: groundhog::Error) -> Self {
        match &e {
            groundhog::Error::Numeric(_) => CliError::Numeric(e.to_string()),
            groundhog::Error::InvalidArgument(_) | groundhog::Error::Vocabulary(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "groundhog", version, about = "Grounded language modeling on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grounded-conversation corpus (JSONL)
    GenData {
        /// Run configuration JSON
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus output path
        #[arg(long)]
        out: PathBuf,
        /// Override the generation seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the sample count
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model on a corpus and write a checkpoint
    Train {
        /// Corpus JSONL path
        #[arg(long)]
        corpus: PathBuf,
        /// Run configuration JSON
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint stem; writes <stem>.ght1 and <stem>.json
        #[arg(long = "out-ckpt")]
        out_ckpt: PathBuf,
        /// Resume from this checkpoint stem (step counter continues)
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Loss log path (JSONL; default <stem>.log.jsonl)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Decode a corpus and report metrics
    Eval {
        /// Checkpoint stem
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus JSONL path
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated list from: ciou, miou, f1, anyiou, pope, recall@1
        #[arg(long, default_value = "ciou,miou,f1,anyiou,pope,recall@1")]
        metrics: String,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump per-sample predictions (JSONL)
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Ground a single prompt against a scene file
    Ground {
        /// Checkpoint stem
        #[arg(long)]
        ckpt: PathBuf,
        /// Scene JSON ({scene, proposals}; corpus lines qualify)
        #[arg(long)]
        scene: PathBuf,
        /// The user prompt
        #[arg(long)]
        text: String,
        /// Write the response here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank proposals per phrase and optionally render overlays
    Diagnose {
        /// Checkpoint stem
        #[arg(long)]
        ckpt: PathBuf,
        /// Scene JSON ({scene, proposals}; corpus lines qualify)
        #[arg(long)]
        scene: PathBuf,
        /// The user prompt
        #[arg(long)]
        text: String,
        /// Proposals to report per phrase, best first
        #[arg(long, default_value_t = 5)]
        topk: usize,
        /// Write NetPBM (P6) overlays into this directory
        #[arg(long = "ppm-dir")]
        ppm_dir: Option<PathBuf>,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_logging() -> Result<(), CliError> {
    let level = match std::env::var("GROUNDHOG_LOG") {
        Ok(v) => match v.as_str() {
            "error" => log::LevelFilter::Error,
            "info" => log::LevelFilter::Info,
            "debug" => log::LevelFilter::Debug,
            other => {
                return Err(CliError::Usage(format!(
                    "GROUNDHOG_LOG must be error, info, or debug, got {other:?}"
                )))
            }
        },
        Err(_) => log::LevelFilter::Error,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .init();
    Ok(())
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            e.print().expect("help output");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    init_logging()?;
    match cli.command {
        Command::GenData { config, out, seed, n } => {
            ops::gen_data(config.as_deref(), &out, seed, n)
        }
        Command::Train { corpus, config, out_ckpt, resume, log } => {
            ops::train(&corpus, config.as_deref(), &out_ckpt, resume.as_deref(), log.as_deref())
        }
        Command::Eval { ckpt, corpus, metrics, out, predictions } => {
            ops::eval(&ckpt, &corpus, &metrics, out.as_deref(), predictions.as_deref())
        }
        Command::Ground { ckpt, scene, text, out } => {
            ops::ground(&ckpt, &scene, &text, out.as_deref())
        }
        Command::Diagnose { ckpt, scene, text, topk, ppm_dir, out } => {
            ops::diagnose(&ckpt, &scene, &text, topk, ppm_dir.as_deref(), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
