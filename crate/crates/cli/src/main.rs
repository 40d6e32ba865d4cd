//! `eet`: trapping-time sweeps, disorder ensembles, subspace reports and
//! optimum searches driven by a TOML run configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eet_core::EetError;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] EetError),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "eet", version, about = "Exciton trapping times and transfer efficiencies")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads, overriding `threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Disorder seed, overriding disorder.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// ⟨t⟩ and efficiencies over the sweep grid.
    Sweep,
    /// Disorder-averaged ⟨t⟩ and q over the Γ×σ grid, with scaling fit.
    Disorder,
    /// Trapping-free exciton subspace of the network.
    Subspace,
    /// Dephasing rate minimising ⟨t⟩.
    Optimum,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut config = RunConfig::load(&path)?;
    if let Some(dir) = cli.out {
        config.output.dir = dir;
    }
    if let Some(threads) = cli.threads {
        config.threads = Some(threads);
    }
    if let Some(seed) = cli.seed {
        match config.disorder.as_mut() {
            Some(d) => d.seed = seed,
            None => return Err(CliError::Config("--seed given but the configuration has no [disorder] block".into())),
        }
    }
    config.validate()?;
    if cli.dump_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    if let Some(threads) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&config.output.dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", config.output.dir.display())))?;
    match cli.command {
        Command::Sweep => commands::sweep(&config),
        Command::Disorder => commands::disorder(&config),
        Command::Subspace => commands::subspace(&config),
        Command::Optimum => commands::optimum(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eet: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
