use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use histoforest_cli::{CliError, Command, Options, RunConfig, Runner};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Synth,
    Extract,
    Train,
    Evaluate,
    Explain,
    Screen,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Synth => Command::Synth,
            Sub::Extract => Command::Extract,
            Sub::Train => Command::Train,
            Sub::Evaluate => Command::Evaluate,
            Sub::Explain => Command::Explain,
            Sub::Screen => Command::Screen,
        }
    }
}

/// Feature-based MSI/MSS classification of H&E tiles.
#[derive(Debug, Parser)]
#[command(name = "histoforest", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// With `evaluate`: neutralize test-tile RGB means and report the AUC drop.
    #[arg(long)]
    ablate_rgb_mean: bool,
}

fn run(args: Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config {
                field: "--threads".into(),
                message: "must be at least 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config {
                field: "--threads".into(),
                message: e.to_string(),
            })?;
    }
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    let runner = Runner::new(
        cfg,
        Options {
            ablate_rgb_mean: args.ablate_rgb_mean,
        },
    )?;
    runner.run(args.command.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HISTOFOREST_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::from(e.exit_code())
        }
    }
}
