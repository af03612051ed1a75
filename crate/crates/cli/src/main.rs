use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dfm_cli::{replay, run, CliError, Command, RunManifest, RunOptions};

#[derive(Parser)]
#[command(name = "dfm", version, about = "Factor extraction MSE experiments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Theoretical and empirical MSE tables, one file per phi.
    MseTable {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confidence bands around one simulated path.
    Bands {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scaled MSEs and equivalence gaps across N.
    Scaling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate a run from its manifest and verify the bytes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<RunManifest, CliError> {
    let options = RunOptions { threads: cli.threads };
    match cli.command {
        Sub::MseTable { config, out } => run(Command::MseTable, &config, &out, options),
        Sub::Bands { config, out } => run(Command::Bands, &config, &out, options),
        Sub::Scaling { config, out } => run(Command::Scaling, &config, &out, options),
        Sub::Replay { manifest, out } => replay(&manifest, &out, options),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(manifest) => {
            for o in &manifest.outputs {
                println!("{}", o.path);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
