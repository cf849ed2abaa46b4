//! `th-recovery`: generate problems, run solvers, sweep benchmarks and
//! smooth signals from the command line.
//!
//! Exit status: 0 on success, 1 for usage or input errors, 2 when a solver
//! fails numerically.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use th_recovery::ThError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl From<ThError> for CliError {
    fn from(e: ThError) -> Self {
        match e {
            ThError::NearSingular { .. }
            | ThError::CardinalityExceeded { .. }
            | ThError::InitialBound { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "th-recovery",
    version,
    about = "Truncated Huber sparse recovery and smoothing"
)]
struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded problem and store it (matrix + JSON sidecar).
    Gen(GenOpts),
    /// Solve a stored problem and print a JSON report.
    Solve(SolveOpts),
    /// Run a success-rate or noise sweep and write CSV.
    Bench(BenchOpts),
    /// Piecewise-constant denoising of a 1D signal.
    Denoise1d(Denoise1dOpts),
    /// Edge-preserving smoothing of a grayscale PGM image.
    Smooth2d(Smooth2dOpts),
    /// Summarise a sweep CSV.
    Report(ReportOpts),
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenOpts {
    /// Matrix family: a1 (correlated Gaussian) or a2 (oversampled DCT).
    #[arg(long)]
    pub family: Option<String>,
    /// Correlation of the Gaussian family.
    #[arg(long)]
    pub r: Option<f64>,
    /// Refinement factor of the DCT family.
    #[arg(long)]
    pub f: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub s: Option<usize>,
    /// sparse or decaying.
    #[arg(long)]
    pub truth: Option<String>,
    /// Noise standard deviation.
    #[arg(long, conflicts_with = "snr")]
    pub sigma: Option<f64>,
    /// Noise level as SNR in dB (signal over noise).
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output matrix path; the sidecar goes next to it with a .json extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SolveOpts {
    /// Problem matrix file written by `gen`.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// th, l1, iht or irls.
    #[arg(long)]
    pub method: Option<String>,
    /// TH model: constrained or regularized.
    #[arg(long)]
    pub mode: Option<String>,
    /// Data weight for regularized TH.
    #[arg(long, conflicts_with = "kappa")]
    pub alpha: Option<f64>,
    /// Regularized TH with alpha = kappa / sigma^2.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Starting threshold: a number, `max`, or `budget:<fraction>`.
    #[arg(long)]
    pub mu0: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Sparsity for IHT; defaults to the stored truth's support size.
    #[arg(long)]
    pub s: Option<usize>,
    /// Exponent for IRLS.
    #[arg(long)]
    pub p: Option<f64>,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch trace CSV for TH.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct BenchOpts {
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub f: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub truth: Option<String>,
    /// Sparsity grid, `start:step:end` or a comma list.
    #[arg(long)]
    pub s_grid: Option<String>,
    /// SNR grid in dB; omit for noise-free trials.
    #[arg(long)]
    pub snr_grid: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma list of th, l1, iht, irls.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma list of kappa values for noisy TH (alpha = kappa / sigma^2).
    #[arg(long)]
    pub kappa: Option<String>,
    #[arg(long)]
    pub mu0: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// No progress on stderr.
    #[arg(long)]
    #[serde(default)]
    pub quiet: bool,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Denoise1dOpts {
    /// Signal CSV, one sample per line.
    #[arg(long = "in", conflicts_with = "blocks")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Synthesise a noisy blocks signal of this length instead of reading one.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Noise level for `--blocks`.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output CSV with columns `x,omega[,b,truth]` (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Smooth2dOpts {
    /// Input 8-bit PGM.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Smoothed image (default: `<in>.smooth.pgm`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Edge map (default: `<in>.edges.pgm`).
    #[arg(long)]
    pub edges: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ReportOpts {
    /// Sweep CSV written by `bench`.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Emit JSON instead of a text table.
    #[arg(long)]
    #[serde(default)]
    pub json: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref().map(config::load).transpose()?;
    let file = file.as_ref();
    match cli.command {
        Command::Gen(o) => commands::gen(config::overlay(o, file, "gen")?),
        Command::Solve(o) => commands::solve(config::overlay(o, file, "solve")?),
        Command::Bench(o) => commands::bench(config::overlay(o, file, "bench")?),
        Command::Denoise1d(o) => commands::denoise1d(config::overlay(o, file, "denoise1d")?),
        Command::Smooth2d(o) => commands::smooth2d(config::overlay(o, file, "smooth2d")?),
        Command::Report(o) => commands::report(config::overlay(o, file, "report")?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
