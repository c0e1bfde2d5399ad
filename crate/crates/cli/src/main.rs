mod commands;
mod run_dir;
mod settings;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use permlearn::Error;

/// Sinkhorn, matching and permutation-learning experiments.
#[derive(Debug, Parser)]
#[command(name = "permlearn", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Root seed; every random draw derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sinkhorn temperature.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Sinkhorn iterations.
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Directory that receives `runs/<name>/`.
    #[arg(long, global = true)]
    pub out_dir: Option<std::path::PathBuf>,
    /// Format of the report written to stdout.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Key-value config file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Run name, defaulting to the subcommand.
    #[arg(long, global = true)]
    pub name: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply the Sinkhorn operator to a matrix file.
    Sinkhorn(commands::SinkhornArgs),
    /// Solve the assignment problem for a matrix file.
    Match(commands::MatchArgs),
    /// Draw Gumbel-Matching or Gumbel-Sinkhorn samples as JSON lines.
    Sample(commands::SampleArgs),
    /// Run the finite-difference gradient gate.
    CheckGrads(commands::CheckGradsArgs),
    /// Train the sorting network.
    TrainSort(commands::TrainSortArgs),
    /// Evaluate a trained sorting network.
    EvalSort(commands::EvalSortArgs),
    /// Variational matching on synthetic data.
    ViMatch(commands::ViMatchArgs),
    /// Train and evaluate sorting networks across sizes and test intervals.
    Table1(commands::Table1Args),
}

/// Exit status 1 for bad input or usage, 2 for numerical failure.
pub fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Domain(_)
        | Error::Feasibility { .. }
        | Error::Overflow { .. }
        | Error::Tape(_)
        | Error::Training { .. } => 2,
        Error::Dimension(_) | Error::Size { .. } | Error::Format { .. } | Error::Config(_) | Error::Io(_) => 1,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("PERMLEARN_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::Config(format!("PERMLEARN_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|()| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
