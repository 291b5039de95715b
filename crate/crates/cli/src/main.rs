use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fpl_cli::{commands, verify, CliError};

#[derive(Parser)]
#[command(name = "fpl", version, about = "Conservative spectral Fokker-Planck-Landau solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the collision weight table for a configuration, or find it in the cache.
    Precompute {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "fpl-out")]
        out: PathBuf,
    },
    /// Integrate a configuration and fill a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "fpl-out")]
        out: PathBuf,
        /// Seed for random initial data.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a self-check suite (all suites when none is named).
    Verify {
        #[arg(long)]
        suite: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize the diagnostics of a run directory or CSV file.
    Analyze {
        run_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Precompute { config, out } => commands::precompute(&config, &out),
        Command::Run { config, out, seed } => commands::run(&config, &out, seed),
        Command::Verify { suite, seed } => verify::verify(suite.as_deref(), seed),
        Command::Analyze { run_dir, out } => {
            let target = run_dir
                .or(out)
                .ok_or_else(|| CliError::Usage("analyze needs a run directory".into()))?;
            commands::analyze(&target).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
