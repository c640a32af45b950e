mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

use config::RunConfig;
use output::Sink;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Spectrum1d,
    Decompose,
    Spectrum2d,
    Sandwich,
    ConvergeWeights,
    Project,
    KernelGap,
    CheckDiscreteness,
    ConnectorConstants,
}

/// Spectral laboratory for inflated regular trees and their 1-D limits.
#[derive(Debug, Parser)]
#[command(name = "treespec", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the `output` key.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set geometry.eps=[0.1,0.05]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = RunConfig::load(&cli.config, &cli.overrides)?;
    if let Some(n) = cfg.thread_count()? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output.clone());
    let sink = Sink::new(&dir, &cfg)?;
    let start = Instant::now();
    let runner = match cli.command {
        Command::Spectrum1d => commands::spectrum1d,
        Command::Decompose => commands::decompose,
        Command::Spectrum2d => commands::spectrum2d,
        Command::Sandwich => commands::sandwich,
        Command::ConvergeWeights => commands::converge_weights,
        Command::Project => commands::project,
        Command::KernelGap => commands::kernel_gap,
        Command::CheckDiscreteness => commands::check_discreteness,
        Command::ConnectorConstants => commands::connector_constants,
    };
    let name = cli.command.to_possible_value().expect("named").get_name().to_string();
    let out = runner(&cfg, &sink).with_context(|| format!("{name} failed"))?;
    let status = if out.pass { "PASS" } else { "FAIL" };
    println!("{name}: {status} | {} | {:.2} s", out.summary, start.elapsed().as_secs_f64());
    Ok(out.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
