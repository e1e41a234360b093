//! `guidemod` command-line interface.
//!
//! Exit codes: 0 success (for `loop`, the threshold was reached), 1 error,
//! 2 the loop completed below the threshold, 3 a run or moderation round
//! aborted at a stage.

mod commands;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "guidemod", version, about = "Iterative annotation-guideline moderation")]
struct Cli {
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate a corpus once under a guideline.
    Annotate(AnnotateArgs),
    /// Score predictions against gold.
    Evaluate(EvaluateArgs),
    /// Categorize discrepancies and print the confusion matrix.
    Analyze(AnalyzeArgs),
    /// Run one moderation round on the dominant discrepancy group.
    Moderate(ModerateArgs),
    /// Run the full annotate, evaluate, moderate loop.
    Loop(LoopArgs),
    /// Paired significance tests between two evaluations.
    Stats(StatsArgs),
    /// Result, matrix and cost tables from run archives.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Corpus directory; defaults to the configured one.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Guideline file; defaults to the configured one.
    #[arg(long)]
    pub guideline: Option<PathBuf>,
    /// Guideline version k; calls are charged to ledger iteration k + 1.
    #[arg(long, default_value_t = 0)]
    pub iteration: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PairArgs {
    /// Gold corpus directory.
    #[arg(long)]
    pub gold: PathBuf,
    /// Prediction directory.
    #[arg(long)]
    pub pred: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long, default_value = "-")]
    pub dataset: String,
    #[arg(long, default_value = "-")]
    pub model: String,
    /// Write the evaluation record as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Matrix label order, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Context characters on each side of a span.
    #[arg(long)]
    pub window: Option<usize>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ModerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Predictions under the guideline being moderated.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub guideline: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub iteration: u32,
    /// Directory for moderation.json and guideline.md.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct LoopArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Archive directory; defaults to the configured one.
    #[arg(long)]
    pub archive: Option<PathBuf>,
}

#[derive(Args)]
pub struct StatsArgs {
    /// Evaluation JSON or run archive for the initial guideline.
    #[arg(long)]
    pub g: PathBuf,
    /// Evaluation JSON or run archive for the moderated guideline.
    #[arg(long)]
    pub m: PathBuf,
    /// Iteration read from a G archive.
    #[arg(long)]
    pub g_iteration: Option<u32>,
    /// Iteration read from an M archive; defaults to its accepted one.
    #[arg(long)]
    pub m_iteration: Option<u32>,
    #[arg(long, default_value = "-")]
    pub dataset: String,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 5_000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 20_000)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ReportArgs {
    /// `DATASET=ARCHIVE` of a run started from the initial guideline.
    #[arg(long = "run", value_name = "DATASET=ARCHIVE", required = true)]
    pub runs: Vec<String>,
    /// `DATASET=ARCHIVE` of a run started with no guideline.
    #[arg(long = "baseline", value_name = "DATASET=ARCHIVE")]
    pub baselines: Vec<String>,
    /// Print every iteration's confusion matrix.
    #[arg(long)]
    pub matrices: bool,
    /// Print the cost projection table.
    #[arg(long)]
    pub costs: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        guidemod::Exec::Sequential
    } else {
        guidemod::Exec::Parallel
    };
    let result = match cli.command {
        Command::Annotate(a) => commands::annotate(a),
        Command::Evaluate(a) => commands::evaluate(a, exec),
        Command::Analyze(a) => commands::analyze(a, exec),
        Command::Moderate(a) => commands::moderate(a, exec),
        Command::Loop(a) => commands::run_loop(a, exec),
        Command::Stats(a) => commands::stats(a, exec),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(outcome) => outcome.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
