//! `ctsurv` command-line front end.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "ctsurv",
    version,
    about = "Bayesian calendar-time survival analysis and trial simulation"
)]
struct Cli {
    /// Worker threads; all cores when absent.
    #[arg(long, global = true, env = "CTSURV_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model and write draws, summary and priors.
    Fit(FitArgs),
    /// Simulate one synthetic trial.
    Simulate(SimulateArgs),
    /// Build the baseline-hazard prior and write priors.json.
    PriorBuild(ModelArgs),
    /// Posterior predictive cumulative incidence from saved draws.
    Ppc(PpcArgs),
    /// Run the prior-strength replication study.
    Replicate(ReplicateArgs),
    /// Summarize saved draws.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub variants: Option<PathBuf>,
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Exit with status 2 unless every R-hat is below 1.05.
    #[arg(long)]
    pub require_converged: bool,
}

#[derive(Debug, Args)]
pub struct PpcArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub draws: PathBuf,
    /// Comma-separated days since enrollment.
    #[arg(long, value_delimiter = ',')]
    pub eval_days: Option<Vec<i64>>,
    #[arg(long)]
    pub n_draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Epidemic curve CSV; the bundled synthetic curves when absent.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub draws: PathBuf,
    /// `parameter=delta_x`, repeatable.
    #[arg(long)]
    pub contrast: Vec<String>,
    #[arg(long)]
    pub require_converged: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status 1.
pub const EXIT_VALIDATION: u8 = 1;
/// Exit status 2.
pub const EXIT_SAMPLER: u8 = 2;

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Sampler(String),
}

impl From<ctsurv::Error> for Failure {
    fn from(e: ctsurv::Error) -> Self {
        match e {
            ctsurv::Error::Sampler(_) => Failure::Sampler(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if !ctsurv::parallel::configure_threads(n) {
            log::warn!("could not set the thread count to {n}");
        }
    }
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::PriorBuild(a) => commands::prior_build(a),
        Command::Ppc(a) => commands::ppc(a),
        Command::Replicate(a) => commands::replicate(a),
        Command::Summarize(a) => commands::summarize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Sampler(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_SAMPLER)
        }
    }
}
