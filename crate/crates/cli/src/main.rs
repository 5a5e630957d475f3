//! `spectrack`: synthetic corpora, feature extraction, training, streaming
//! detection and the evaluation protocols from one binary.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use spectrack::config::{RunConfig, KEYS};
use spectrack::{ConfigError, DumpError, EvalError, ModelError, SpectralError};

pub const DATA_DIR_ENV: &str = "SPECTRACK_DATA_DIR";

fn config_help() -> String {
    let mut s =
        String::from("Configuration keys (file lines `key = value`, or `--set key=value`):\n");
    for (k, d, doc) in KEYS {
        let d = if d.is_empty() { "unset" } else { d };
        s.push_str(&format!("  {k:<15} [default: {d}]  {doc}\n"));
    }
    s.push_str(&format!(
        "\nThe corpus directory is --data, else `data_dir`, else ${DATA_DIR_ENV}.\n\
         Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure."
    ));
    s
}

#[derive(Parser, Debug)]
#[command(name = "spectrack", version, about = "Spectral anomaly detection on activation streams", after_help = config_help())]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a balanced synthetic corpus (dumps, sidecars, manifest).
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a feature CSV for each activation dump.
    Features {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a classifier on the corpus training split.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score streams token by token; JSON lines on stdout. `-` reads stdin.
    Detect {
        #[arg(long)]
        model: PathBuf,
        /// Inputs are feature CSVs instead of activation dumps.
        #[arg(long)]
        features: bool,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// AUROC, F1 and ROC on the test split.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AUROC and latency per window size, retraining for each size.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        sizes: Vec<usize>,
        /// Keep the configured stride instead of tumbling windows.
        #[arg(long)]
        sliding: bool,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// AUROC when scoring only the first t tokens of each test stream.
    Prefix {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "8,16,24,32,48,64,96,128")]
        prefixes: Vec<u64>,
    },
    /// Train one classifier per feature triplet and rank them.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate this many random triplets instead of all 1540.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Shapley attribution of the model score over the 22 features.
    Importance {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        permutations: usize,
        /// Use at most this many test streams.
        #[arg(long)]
        max_sequences: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    /// Stdout was closed by the reader; not reported.
    ClosedOutput,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            message: msg.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
            ErrorKind::ClosedOutput => 0,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<DumpError> for CliError {
    fn from(e: DumpError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return Self {
                kind: ErrorKind::ClosedOutput,
                message: e.to_string(),
            };
        }
        Self::data(e.to_string())
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        Self {
            kind: ErrorKind::Numeric,
            message: e.to_string(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } => Self {
                kind: ErrorKind::Numeric,
                message: e.to_string(),
            },
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Dump(d) => d.into(),
            EvalError::Spectral(s) => s.into(),
            EvalError::Io(io) => io.into(),
            other => Self::data(other.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::config("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    commands::dispatch(&cli.command, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.kind == ErrorKind::ClosedOutput => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.kind {
                ErrorKind::Config => "config",
                ErrorKind::Data => "data",
                ErrorKind::Numeric => "numeric",
                ErrorKind::ClosedOutput => unreachable!(),
            };
            eprintln!(
                "{}",
                json!({"error": {"kind": kind, "message": e.message, "exit_code": e.exit_code()}})
            );
            ExitCode::from(e.exit_code())
        }
    }
}
