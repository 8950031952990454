//! `tsflow`: train, sample, forecast, and evaluate flow-matching
//! time-series models from TOML run configs.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ModeArg, SplitArg};

/// Command failures, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; nothing was written. Exit code 1.
    Validation(Vec<String>),
    /// Numerical or I/O failure during execution. Exit code 2.
    Runtime(String),
}

#[derive(Parser)]
#[command(
    name = "tsflow",
    version,
    about = "Flow-matching time-series generation and forecasting",
    after_help = "Config overrides: any trailing `--section.key value` pairs are applied \
                  to the TOML config (e.g. `--train.epochs 1`). TSFLOW_SEED overrides the seed."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the configured synthetic dataset as a loadable CSV
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Train a model; writes checkpoint, training log, and resolved config
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Forecast every window of a split; writes samples, quantiles, CRPS
    Forecast {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 100)]
        n_samples: usize,
        /// Defaults to the mode matching the checkpoint's conditionality
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Generate unconditional sequences in normalized space
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long, default_value_t = 10_000)]
        n: usize,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Evaluation reports
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Batched 2-Wasserstein distance between two sample CSVs
    W2 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Linear predictive score of model samples vs. real test windows
    Lps {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 256)]
        n_synthetic: usize,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Optimal-coupling cost ratios per kernel and batch multiple
    Wstudy {
        #[arg(long)]
        config: PathBuf,
        /// Kernel names: isotropic, se, ou, pe
        #[arg(long, value_delimiter = ',',
              default_values_t = ["isotropic".to_string(), "se".to_string(),
                                  "ou".to_string(), "pe".to_string()])]
        kernels: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
        multiples: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Synth { config, overrides } => {
            let cfg = config::load_config(&config, &overrides)?;
            commands::cmd_synth(&cfg)
        }
        Cmd::Train { config, overrides } => {
            let cfg = config::load_config(&config, &overrides)?;
            commands::cmd_train(&cfg)
        }
        Cmd::Forecast {
            config,
            checkpoint,
            split,
            n_samples,
            mode,
            overrides,
        } => {
            let cfg = config::load_config(&config, &overrides)?;
            commands::cmd_forecast(&cfg, &checkpoint, split, n_samples, mode)
        }
        Cmd::Sample {
            config,
            checkpoint,
            n,
            overrides,
        } => {
            let cfg = config::load_config(&config, &overrides)?;
            commands::cmd_sample(&cfg, &checkpoint, n)
        }
        Cmd::Eval { cmd } => match cmd {
            EvalCmd::W2 { a, b, batch, out } => commands::cmd_eval_w2(&a, &b, batch, &out),
            EvalCmd::Lps {
                config,
                checkpoint,
                n_synthetic,
                overrides,
            } => {
                let cfg = config::load_config(&config, &overrides)?;
                commands::cmd_eval_lps(&cfg, &checkpoint, n_synthetic)
            }
            EvalCmd::Wstudy {
                config,
                kernels,
                multiples,
                batch,
                trials,
                overrides,
            } => {
                let cfg = config::load_config(&config, &overrides)?;
                commands::cmd_eval_wstudy(&cfg, &kernels, &multiples, batch, trials)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(errs)) => {
            for e in &errs {
                eprintln!("error: {e}");
            }
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
