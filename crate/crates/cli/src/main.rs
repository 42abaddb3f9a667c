mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Filter-stability experiments on finite-state hidden Markov models.
#[derive(Debug, Parser)]
#[command(name = "filterstab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a model and report its stability coefficients.
    Validate(RunArgs),
    /// Sample a trajectory and write it as CSV.
    Simulate(RunArgs),
    /// Filter-pair decay with bound and likelihood-ratio traces.
    Stability(RunArgs),
    /// Geometric ergodicity gaps and the stationary backward bound.
    Ergodicity(RunArgs),
    /// Oscillation of the backward density against its bound.
    Backward(RunArgs),
    /// Closed-form check of the four-state counterexample.
    Kaijser(RunArgs),
    /// Running averages of filter expectations of state indicators.
    Lln(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorChoice {
    Nu,
    Beta,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Model document (JSON).
    #[arg(long, conflicts_with = "scenario")]
    model: Option<PathBuf>,
    /// Built-in scenario: kaijser, example11, mixing2, uniformK.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trailing fraction of the TV sequence used for the decay slope.
    #[arg(long, default_value_t = filterstab::harness::DEFAULT_WINDOW_FRACTION)]
    window_fraction: f64,
    /// Result file; the summary goes next to it with a `.summary.json` suffix.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Comma-separated override of the true prior.
    #[arg(long)]
    nu: Option<String>,
    /// Comma-separated override of the assumed prior.
    #[arg(long)]
    beta: Option<String>,
    /// Largest step count for the ergodicity report.
    #[arg(long, default_value_t = 50)]
    n_max: usize,
    /// Prior that seeds the filter in `backward` and `lln`.
    #[arg(long, value_enum)]
    prior: Option<PriorChoice>,
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_PROPERTY: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Stability(a) => commands::stability(a),
        Command::Ergodicity(a) => commands::ergodicity(a),
        Command::Backward(a) => commands::backward(a),
        Command::Kaijser(a) => commands::kaijser(a),
        Command::Lln(a) => commands::lln(a),
    };
    match result {
        Ok(true) => ExitCode::from(EXIT_OK),
        Ok(false) => {
            eprintln!("error: property check failed");
            ExitCode::from(EXIT_PROPERTY)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Library errors split into input and numerical failures; anything else
/// (unreadable files, bad flag values) is an input error.
fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<filterstab::Error>() {
        Some(err) if !err.is_input_error() => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}
