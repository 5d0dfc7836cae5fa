//! Command-line front end: all logic lives in `decoupler::runner`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure during optimization, 3 failed consistency check.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use decoupler::runner::{self, CostEvalMode};
use decoupler::Error;

#[derive(Parser)]
#[command(
    name = "decoupler",
    about = "Variational compilation of quantum circuits by staged decoupling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config and write traces, a summary,
    /// and a training-curve plot into its output directory.
    Compile {
        /// Experiment description (JSON)
        config: PathBuf,
        /// Worker-pool size override (default: machine parallelism)
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate the decoupling cost of a circuit file under a partition.
    /// Parameterized circuits are evaluated at all-zero angles.
    CostEval {
        /// Circuit description (JSON)
        circuit: PathBuf,
        /// Qubit blocks, e.g. "0,1;2,3" (every block scored)
        #[arg(long)]
        partition: String,
        /// exact | sampled
        #[arg(long, default_value = "exact")]
        mode: String,
        /// Shots for sampled mode
        #[arg(long, default_value_t = 10_000)]
        shots: u64,
        /// Seed for sampled mode
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare shift-rule gradients of the decoupling cost against finite
    /// differences at 5 random points.
    GradCheck {
        /// Circuit description (JSON)
        circuit: PathBuf,
        /// Agreement tolerance per component
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Qubit blocks (default: every qubit its own block)
        #[arg(long)]
        partition: Option<String>,
        /// Seed for the random evaluation points
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate trace CSVs into one SVG of median curves with
    /// interquartile bands.
    Plot {
        /// Trace CSV files
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Output SVG path
        #[arg(short, long, default_value = "curves.svg")]
        output: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NumericalFailure { .. } => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Compile { config, workers } => {
            runner::cmd_compile(&config, workers)?;
            Ok(0)
        }
        Command::CostEval { circuit, partition, mode, shots, seed } => {
            let mode = match mode.as_str() {
                "exact" => CostEvalMode::Exact,
                "sampled" => CostEvalMode::Sampled { shots, seed },
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "mode must be exact or sampled, got {other:?}"
                    )))
                }
            };
            runner::cmd_cost_eval(&circuit, &partition, mode)?;
            Ok(0)
        }
        Command::GradCheck { circuit, tol, partition, seed } => {
            let ok = runner::cmd_grad_check(&circuit, partition.as_deref(), tol, seed)?;
            Ok(if ok { 0 } else { 3 })
        }
        Command::Plot { traces, output } => {
            runner::cmd_plot(&traces, &output)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // keep clap's rendered help/error text but use exit code 1 for
            // usage problems (clap's default would be 2, which collides
            // with the numerical-failure code)
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
