use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use opca_cli::commands;
use opca_cli::config::load_config;

/// Streaming-subspace autoencoder trainer and experiment runner.
///
/// Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.
#[derive(Parser)]
#[command(name = "opca", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per a config file; writes a loss CSV and per-epoch checkpoints.
    Train {
        /// Flat key=value config file.
        config: PathBuf,
        /// Override a config key, e.g. --set seed=7. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint: sorted truncation to k components, then
    /// (k, bits, MSE, PSNR, SSIM).
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Components to keep; defaults to all.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Metrics across the config's basis fractions, with reconstruction
    /// grids per fraction.
    Scaling {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Vary one latent component of one image across a range; emits a PGM
    /// strip and a coefficient CSV.
    Traverse {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print latent bit budgets for continuous (N,k,b) and discrete (N,K)
    /// latent descriptions.
    Budget {
        /// Continuous spec as N,k,b. Repeatable.
        #[arg(long)]
        continuous: Vec<String>,
        /// Discrete spec as N,K. Repeatable.
        #[arg(long)]
        discrete: Vec<String>,
        /// Charge whole bits per token for discrete codes.
        #[arg(long)]
        ceil: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match &cli.command {
        Command::Train { config, set } => {
            load_config(config, set).and_then(|cfg| commands::cmd_train(&cfg).map(|_| ()))
        }
        Command::Eval {
            config,
            checkpoint,
            k,
            set,
        } => load_config(config, set)
            .and_then(|cfg| commands::cmd_eval(&cfg, checkpoint, *k).map(|_| ())),
        Command::Scaling {
            config,
            checkpoint,
            set,
        } => load_config(config, set)
            .and_then(|cfg| commands::cmd_scaling(&cfg, checkpoint).map(|_| ())),
        Command::Traverse {
            config,
            checkpoint,
            set,
        } => load_config(config, set)
            .and_then(|cfg| commands::cmd_traverse(&cfg, checkpoint).map(|_| ())),
        Command::Budget {
            continuous,
            discrete,
            ceil,
        } => commands::cmd_budget(continuous, discrete, *ceil).map(|table| print!("{table}")),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
