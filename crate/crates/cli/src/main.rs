//! `censor-ekf`: generate synthetic data, run the censored EKF, sweep
//! seeds and emit plot-ready tables.

mod commands;
mod help;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "censor-ekf", version, about = "Extended Kalman filtering with detection-limited observations")]
#[command(after_long_help = help::CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the truth and write the dataset and truth CSVs.
    #[command(after_long_help = help::CONFIG_KEYS)]
    Simulate(Common),
    /// Filter a dataset and write per-step results and a summary.
    #[command(after_long_help = help::CONFIG_KEYS)]
    Filter(FilterArgs),
    /// Simulate and filter many seeds in parallel and aggregate the results.
    #[command(after_long_help = help::CONFIG_KEYS)]
    Sweep(SweepArgs),
    /// Turn results (plus optional truth and dataset) into a long-format CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `filter.substeps=40`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to `output.dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed; defaults to `seed` of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Treat censored values as exact measurements.
    #[arg(long)]
    plain_ekf: bool,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset CSV; defaults to the dataset file in the output directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Truth CSV; when given the summary includes the state RMSE.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Seeds as a half-open range `a..b` or a comma-separated list.
    #[arg(long, default_value = "0..10")]
    seeds: String,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Results CSV written by `filter` or `sweep`.
    #[arg(long)]
    results: PathBuf,
    /// Truth CSV to include as a series.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Dataset CSV to include as observation series.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory; defaults to the directory of the results file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CENSOR_EKF_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Filter(f) => commands::filter(&f),
        Command::Sweep(s) => commands::sweep(&s),
        Command::Report(r) => commands::report(&r),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Invalid(_) => 2,
                CliError::Runtime(_) => 1,
            })
        }
    }
}
