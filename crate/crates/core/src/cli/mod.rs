//! The `ual` command line: dataset simulation, training, evaluation and
//! gradient checking. Machine output is JSON lines; human tables are printed
//! from those same records.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::UalError;
use crate::pipeline::config::{Ablation, Branch};
use crate::pipeline::fusion::FusionStrategy;

pub use manifest::{DatasetRef, RunManifest, MANIFEST_FILE};

pub const LOG_ENV: &str = "UAL_LOG_LEVEL";

#[derive(Debug, Parser)]
#[command(name = "ual", version, about = "Uncertainty-aware group emotion recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic group dataset.
    Simulate(SimulateArgs),
    /// Train the enabled branches and write models, logs and a manifest.
    Train(TrainArgs),
    /// Evaluate a trained run on a dataset.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of every unit and loss term.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Generator settings (key=value); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the sample seed of the settings file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training settings (key=value); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `all`, one branch, or a comma list.
    #[arg(long)]
    pub branch: Option<BranchList>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub fusion: Option<FusionStrategy>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// One or more fusion strategies, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fusion: Vec<FusionStrategy>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Branches to fuse; defaults to every trained branch.
    #[arg(long)]
    pub branch: Option<BranchList>,
    /// Monte-Carlo sample counts; more than one value runs a sweep.
    #[arg(long, value_delimiter = ',')]
    pub mc_samples: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repeated inferences per group used to measure prediction spread in a sweep.
    #[arg(long, default_value_t = 20)]
    pub spread_repeats: usize,
    /// Evaluate even if the dataset hash is not in the manifest.
    #[arg(long)]
    pub force: bool,
    /// Report file (JSON lines). Without it the records go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of random instances per objective.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Add a unit with a deliberately wrong backward pass; the check must then fail.
    #[arg(long)]
    pub self_test: bool,
}

/// `all`, one branch name, or a comma list such as `face,scene`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchList(pub Vec<Branch>);

impl std::str::FromStr for BranchList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        crate::pipeline::config::parse_branches(s)
            .map(BranchList)
            .map_err(|e| e.to_string())
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run a parsed command. `Ok` carries the exit code for commands whose
/// outcome is a verdict rather than an error.
pub fn execute(cli: Cli) -> Result<i32, UalError> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a).map(|_| 0),
        Command::Train(a) => commands::train(&a).map(|_| 0),
        Command::Eval(a) => commands::eval(&a).map(|_| 0),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    }
}
