//! `stoxlstm`: train, forecast, evaluate, inspect and time the stochastic
//! xLSTM forecaster.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;

#[derive(Parser)]
#[command(name = "stoxlstm", version, about = "Stochastic xLSTM time-series forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model; writes model.ckpt, history.csv and train_summary.json.
    Train(Overrides),
    /// Forecast the horizon after a given row; writes per-channel CSV and SVG.
    Predict {
        #[command(flatten)]
        flags: Overrides,
        /// Row index of the first forecast value (default: end of file).
        #[arg(long)]
        origin: Option<usize>,
    },
    /// Score the test split against the seasonal-naive baseline.
    Eval(Overrides),
    /// Export per-step latent and hidden matrices for one test sequence.
    DumpLatents {
        #[command(flatten)]
        flags: Overrides,
        /// Test sequence index (window-major, channels fastest).
        #[arg(long)]
        window: Option<usize>,
    },
    /// Time the forward pass over a grid of lengths and channel counts.
    Bench(Overrides),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<stoxlstm::Error>() {
            return if e.is_numeric() { 3 } else { 2 };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(f) => commands::run_train(&f.resolve()?),
        Command::Predict { flags, origin } => commands::run_predict(&flags.resolve()?, origin),
        Command::Eval(f) => commands::run_eval(&f.resolve()?),
        Command::DumpLatents { flags, window } => {
            let mut r = flags.resolve()?;
            if let Some(w) = window {
                r.run.eval.window = w;
            }
            commands::run_dump_latents(&r)
        }
        Command::Bench(f) => commands::run_bench(&f.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
