//! `y2net`: dataset synthesis, training, inference, evaluation and RTF
//! benchmarking for the two-stage Y-Net echo canceller.

mod bench;
mod config;
mod eval;
mod infer;
mod synth;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Invalid configuration or flags; exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A run exceeded its time budget; exit code 4.
#[derive(Debug)]
pub struct BudgetError(pub String);

impl std::fmt::Display for BudgetError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "budget violation: {}", self.0)
    }
}

impl std::error::Error for BudgetError {}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_BUDGET: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "y2net", version, about = "Two-stage Y-Net acoustic echo cancellation and noise suppression")]
struct Cli {
    /// Worker threads for data synthesis, training and evaluation
    /// (default: all cores). Benchmarks always run on one thread.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic echo/near-end/noise dataset and its manifest.
    Synth(synth::Args),
    /// Pretrain the AEC, train jointly, or train the single-stage model.
    Train(train::Args),
    /// Process a far-end/microphone WAV pair into the enhanced signal.
    Infer(infer::Args),
    /// Evaluate a checkpoint on a manifest under the four signal conditions.
    Eval(eval::Args),
    /// Measure the real-time factor of per-frame processing.
    Bench(bench::Args),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<clap::Error>() {
            return EXIT_CONFIG;
        }
        if cause.is::<BudgetError>() {
            return EXIT_BUDGET;
        }
        if let Some(e) = cause.downcast_ref::<y2net_core::Error>() {
            if e.is_config_error() {
                return EXIT_CONFIG;
            }
            if e.is_data_error() {
                return EXIT_DATA;
            }
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Bench(a) => bench::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&ConfigError("x".into()).into()), EXIT_CONFIG);
        assert_eq!(exit_code(&BudgetError("x".into()).into()), EXIT_BUDGET);
        assert_eq!(exit_code(&y2net_core::Error::Data("x".into()).into()), EXIT_DATA);
        assert_eq!(exit_code(&y2net_core::Error::Config("x".into()).into()), EXIT_CONFIG);
        let wrapped = anyhow::Error::from(y2net_core::Error::Data("x".into())).context("loading");
        assert_eq!(exit_code(&wrapped), EXIT_DATA);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
