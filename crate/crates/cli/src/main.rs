//! `randcorr`: simulate randomized-measurement experiments, analyze them, and scan witness bounds.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 I/O or malformed input,
//! 3 scientific failure (bound violation, non-physical state).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Science(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Science(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Science(m) => m,
        }
    }
}

impl From<randcorr::Error> for CliError {
    fn from(e: randcorr::Error) -> Self {
        use randcorr::Error::*;
        let msg = e.to_string();
        match e {
            Io(_) | Parse { .. } | Version(_) => CliError::Io(msg),
            NotHermitian(_) | Trace(_) | NotPositive(_) | NegativeProbability(_) => CliError::Science(msg),
            _ => CliError::Usage(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "randcorr", version, about = "Entanglement detection from randomized local measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate random-setting measurements of a state and write a dataset file.
    Simulate(SimulateArgs),
    /// Estimate moments and witnesses from a dataset; write report, histograms and product tests.
    Analyze(AnalyzeArgs),
    /// Sample random states and compare their witness values with the biseparable bound.
    Scan(ScanArgs),
    /// Pretty-print a report file.
    Report(ReportArgs),
    /// Print the configuration resolved from defaults and the config file, as TOML.
    Config(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $RANDCORR_OUT_DIR, then the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// trisep, bisep:<phi>, ghz, cluster, mixed:<n> or tensor:<path>.
    #[arg(long)]
    state: Option<String>,
    #[arg(long)]
    settings: Option<usize>,
    /// Shots per setting, or `exact`.
    #[arg(long)]
    shots: Option<String>,
    /// none, fresh or drift:<block>, optionally suffixed with @<stream>.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// File name inside the output directory.
    #[arg(long, default_value = "dataset.txt")]
    output: String,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    dataset: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    bins: Option<usize>,
    /// Significance level of the product-distribution tests.
    #[arg(long)]
    alpha: Option<f64>,
    /// Detection threshold in standard errors.
    #[arg(long)]
    z: Option<f64>,
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[command(flatten)]
    common: Common,
    /// Number of qubits.
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
    n: u8,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// biseparable, all-states or boundary.
    #[arg(long, default_value = "biseparable")]
    mode: String,
    #[arg(long, default_value_t = randcorr::bisep::DEFAULT_BIN_WIDTH)]
    bin_width: f64,
    #[arg(long, default_value_t = randcorr::bisep::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Merge with an existing frontier file of the same binning instead of overwriting it.
    #[arg(long)]
    accumulate: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    file: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            let mut config = commands::base_config(&a.common)?;
            if let Some(v) = a.state {
                config.state = v;
            }
            if let Some(v) = a.settings {
                config.settings = v;
            }
            if let Some(v) = a.shots {
                config.shots = v;
            }
            if let Some(v) = a.noise {
                config.noise = v;
            }
            if let Some(v) = a.seed {
                config.seed = v;
            }
            commands::with_threads(a.common.threads, || commands::simulate(&config, &a.output))
        }
        Command::Analyze(a) => {
            let mut config = commands::base_config(&a.common)?;
            if let Some(v) = a.bins {
                config.bins = v;
            }
            if let Some(v) = a.alpha {
                config.alpha = v;
            }
            if let Some(v) = a.z {
                config.z = v;
            }
            commands::with_threads(a.common.threads, || commands::analyze(&config, &a.dataset))
        }
        Command::Scan(a) => {
            let mut config = commands::base_config(&a.common)?;
            if let Some(v) = a.seed {
                config.seed = v;
            }
            let mode = a.mode.parse().map_err(|e: randcorr::Error| CliError::Usage(e.to_string()))?;
            let scan = randcorr::bisep::ScanConfig {
                n: a.n as usize,
                samples: a.samples,
                bin_width: a.bin_width,
                tolerance: a.tolerance,
                seed: config.seed,
                mode,
            };
            commands::with_threads(a.common.threads, || commands::scan(&config, &scan, a.accumulate))
        }
        Command::Report(a) => commands::report(&a.file),
        Command::Config(common) => {
            let config = commands::base_config(&common)?;
            config.validate().map_err(CliError::Usage)?;
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
