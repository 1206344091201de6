//! `rqmc-is`: runs importance-sampling quadrature experiments from a config
//! file and writes tidy CSV artifacts.

mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Experiment, ExperimentConfig, Overrides};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "rqmc-is", version, about = "Lattice-rule importance sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed, overriding `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured experiment.
    Run,
    /// Check a config and print the resolved proposals and predicted rates.
    Validate,
    /// Build a generating vector by CBC and write it.
    Cbc,
    /// Write the θ̂(h) decay table.
    Theta,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
    };
    let need_config = || {
        cli.config
            .as_deref()
            .ok_or_else(|| CliError::Config("--config is required".into()))
    };
    match cli.command {
        Command::Run => {
            let cfg = ExperimentConfig::load(need_config()?, &overrides)?;
            run::run(&cfg)?;
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Validate => {
            let cfg = ExperimentConfig::load(need_config()?, &overrides)?;
            print!("{}", run::validate_report(&cfg)?);
        }
        Command::Cbc => {
            let cfg = ExperimentConfig::load_for(cli.config.as_deref(), &overrides, Experiment::Cbc)?;
            run::run(&cfg)?;
            println!("wrote {}", cfg.out_dir.join("generating_vector.txt").display());
        }
        Command::Theta => {
            let cfg = ExperimentConfig::load_for(cli.config.as_deref(), &overrides, Experiment::ThetaDecay)?;
            run::run(&cfg)?;
            println!("wrote {}", cfg.out_dir.join("theta.csv").display());
        }
    }
    Ok(())
}
