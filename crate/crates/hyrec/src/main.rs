//! `hyrec`: hybrid projection with recycling from the command line.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "hyrec",
    version,
    about = "Hybrid projection with Krylov recycling and compression"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides `problem.seed`.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Record wall-clock times (otherwise logged as 0 so outputs are reproducible).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deblurring run (blur1d or blur2d problem).
    Deblur,
    /// Tomography run (tomo problem).
    Tomo,
    /// Multi-dataset tomography with the four workflows.
    Stream {
        /// Run only this workflow: 1 recycle-sequential, 2 last-dataset, 3 all-data, 4 average.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        approach: Option<u8>,
    },
    /// Numerical checks of the recycling/compression theory.
    Verify {
        /// Perturb the compressed projected matrix so the checks must fail.
        #[arg(long)]
        fault_inject: bool,
    },
    /// Storage-cost table for every split k + l = m.
    Cost {
        /// Total basis budget m (default: solver.storage_limit).
        #[arg(long)]
        m: Option<usize>,
        /// Unknowns N (default: from the configured problem).
        #[arg(long)]
        n: Option<usize>,
        /// Measurements M (default: from the configured problem).
        #[arg(long)]
        rows: Option<usize>,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .context("--config is required for this command")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.problem.set_seed(s);
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.outputs.dir.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| Path::new("out").to_path_buf())
}

fn run(cli: &Cli) -> Result<bool> {
    match cli.command {
        Command::Deblur | Command::Tomo => {
            let cfg = load(cli)?;
            let is_tomo = matches!(cfg.problem, config::ProblemSpec::Tomo { .. });
            if is_tomo != matches!(cli.command, Command::Tomo) {
                bail!("problem kind does not match the subcommand (deblur: blur1d/blur2d, tomo: tomo)");
            }
            commands::run_single(&cfg, &out_dir(cli, Some(&cfg)), cli.timing)?;
            Ok(true)
        }
        Command::Stream { approach } => {
            let cfg = load(cli)?;
            commands::run_stream(&cfg, &out_dir(cli, Some(&cfg)), approach, cli.timing)?;
            Ok(true)
        }
        Command::Verify { fault_inject } => {
            let cfg = load(cli)?;
            commands::run_verify(&cfg, &out_dir(cli, Some(&cfg)), fault_inject)
        }
        Command::Cost { m, n, rows } => {
            let cfg = cli.config.as_ref().map(|_| load(cli)).transpose()?;
            let built = match (&cfg, n, rows) {
                (Some(c), None, _) | (Some(c), _, None) => Some(commands::build(&c.problem)?),
                _ => None,
            };
            let n = n
                .or(built.as_ref().map(|b| b.op.ncols()))
                .context("--n or --config is required")?;
            let rows = rows
                .or(built.as_ref().map(|b| b.op.nrows()))
                .context("--rows or --config is required")?;
            let m = m
                .or(cfg.as_ref().map(|c| c.solver.storage_limit))
                .context("--m or --config is required")?;
            let table = commands::cost_table(m, n, rows);
            print!("{table}");
            if cli.out.is_some() || cfg.as_ref().is_some_and(|c| c.outputs.dir.is_some()) {
                output::write(&out_dir(cli, cfg.as_ref()), "cost.csv", &table)?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("hyrec: one or more hard checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("hyrec: {e:#}");
            ExitCode::from(2)
        }
    }
}
