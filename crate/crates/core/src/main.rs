use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dlm_ibis::config::{Mode, RunConfig, Settings};
use dlm_ibis::Error;

/// Sequential Bayesian inference for spatially coupled temperature DLMs.
#[derive(Parser)]
#[command(name = "dlm-ibis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a series and its ground truth.
    Simulate(CommandArgs),
    /// Fit a model with IBIS (serial or batched, full or windowed).
    Fit(CommandArgs),
    /// Forecast ahead of the data using a fitted posterior.
    Forecast(CommandArgs),
    /// Within-sample posterior predictive summaries.
    Predict(CommandArgs),
    /// Log Bayes factors between models.
    Compare(CommandArgs),
}

#[derive(Args)]
struct CommandArgs {
    /// Key-value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Fit(a) => (Mode::Fit, a),
        Command::Forecast(a) => (Mode::Forecast, a),
        Command::Predict(a) => (Mode::Predict, a),
        Command::Compare(a) => (Mode::Compare, a),
    };
    let result = (|| {
        let base = match &args.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let cfg = RunConfig::resolve(mode, &base.merged(args.settings))?;
        dlm_ibis::cli::run(&cfg)
    })();
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
