use clap::{Parser, Subcommand};
use levy_tilt::{exit_code_for, run, CliOverrides, Mode};
use std::path::PathBuf;
use std::process::ExitCode;

/// Variational inference for truncated stable Levy SDEs via neural
/// exponential tilting.
#[derive(Parser)]
#[command(name = "levy-tilt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets with known parameters.
    Generate(CommonArgs),
    /// Train one model on one window.
    Train(CommonArgs),
    /// Rolling-window training plus prior-SDE forecasting.
    Forecast(CommonArgs),
    /// Score forecasts against held-out truth.
    Evaluate(CommonArgs),
    /// Join metrics across runs into a ranking table.
    Compare(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow overwriting existing outputs (generate).
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("LEVY_TILT_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: LEVY_TILT_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Generate(a) => (Mode::Generate, a),
        Command::Train(a) => (Mode::Train, a),
        Command::Forecast(a) => (Mode::Forecast, a),
        Command::Evaluate(a) => (Mode::Evaluate, a),
        Command::Compare(a) => (Mode::Compare, a),
    };
    let overrides = CliOverrides {
        seed: args.seed,
        out: args.out.clone(),
        force: args.force,
    };
    match run(mode, &args.config, overrides) {
        Ok(levy_tilt::Outcome::Ok) => ExitCode::SUCCESS,
        Ok(levy_tilt::Outcome::Diverged) => {
            eprintln!("training diverged; artifacts written with the partial trace");
            ExitCode::from(4)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err) as u8)
        }
    }
}
