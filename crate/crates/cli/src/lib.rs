//! `spinboson` command-line driver.
//!
//! Every subcommand works on a run directory. Outputs land under `--out`
//! (default: the `--in` directory, else `$SPINBOSON_OUT/default`, else
//! `runs/default`) and are listed in its `manifest.json`.

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use spinboson_ml::Error;

pub use config::RunConfig;
pub use manifest::Manifest;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SPINBOSON_OUT";

#[derive(Debug, Parser)]
#[command(name = "spinboson", version, about = "Spin-boson dynamics datasets and ML forecaster benchmarks")]
pub struct Cli {
    /// JSON run config; defaults to `<in>/config.json` when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; derives one seed per stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run directory to write to.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run directory to read from; defaults to `--out`.
    #[arg(long = "in", global = true)]
    pub input: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridChoice {
    Full,
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate the reference dynamics over the parameter grid and set aside the hold-out trajectories.
    Generate {
        #[arg(long, value_enum)]
        grid: Option<GridChoice>,
    },
    /// Cut training trajectories into windows and split them.
    Slice {
        /// Input window length `T`; slices are `T + 1` long.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Hyperparameter search: validation-MAE grid for KRR ids, particle swarm for `cnn1d`.
    Search {
        #[arg(long, alias = "model", value_delimiter = ',', required = true)]
        models: Vec<String>,
    },
    /// Fit one model and save it under `models/`.
    Train {
        #[arg(long)]
        model: String,
        /// Training samples (seeded subset).
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Recursive forecasts of one model over the hold-out set.
    Forecast {
        #[arg(long)]
        model: String,
        #[arg(long)]
        holdout: Option<PathBuf>,
    },
    /// Forecast with several models and write the comparison table.
    Benchmark {
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long)]
        holdout: Option<PathBuf>,
    },
    /// Render the benchmark table as markdown.
    Report,
}

/// Process exit status for an error: 1 for bad configuration or malformed
/// input, 2 for numerical failure, 3 for a missing input artifact.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotConverged { .. } | Error::NonFinite { .. } | Error::Solve(_) => 2,
        Error::MissingInput(_) => 3,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
        Error::Csv(c) => match c.kind() {
            csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
            _ => 1,
        },
        _ => 1,
    }
}

/// An error plus where it happened.
#[derive(Debug)]
pub struct Failure {
    pub error: Error,
    pub context: Option<String>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { error, context: None }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.context {
            Some(c) => write!(f, "{c}: {}", self.error),
            None => write!(f, "{}", self.error),
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli, argv) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            exit_code(&f.error)
        }
    }
}
