//! `fpnet run <config>` and `fpnet validate <config>`.

mod artifacts;
mod config;
mod error;
mod experiment;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{Command, ExperimentConfig};
use error::CliError;

/// Environment variable capping the worker count.
const JOBS_ENV: &str = "FPNET_JOBS";

#[derive(Parser)]
#[command(name = "fpnet", version, about = "Fixed points of random-weight networks")]
struct Cli {
    #[command(subcommand)]
    action: Action,
}

#[derive(Subcommand)]
enum Action {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Run this command instead of the one in the file.
        #[arg(long)]
        command: Option<Command>,
        /// Write artifacts here instead of the configured directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check a config file and print every derived quantity.
    Validate {
        config: PathBuf,
        #[arg(long)]
        command: Option<Command>,
    },
}

fn load(path: &Path, command: Option<Command>) -> Result<(ExperimentConfig, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("reading {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)
        .map_err(|e| CliError::Parse(format!("{}: {}", path.display(), e.message())))?;
    if let Some(c) = command {
        cfg.command = c;
    }
    Ok((cfg, text))
}

fn resolve_jobs(flag: Option<usize>) -> usize {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    let jobs = flag.unwrap_or(default).max(1);
    match std::env::var(JOBS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => jobs.min(cap),
        _ => jobs,
    }
}

fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

/// Prints a line to stdout; a closed pipe is not an error.
fn emit(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn run(
    path: &Path,
    jobs: Option<usize>,
    command: Option<Command>,
    output_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let (mut cfg, text) = load(path, command)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    cfg.validate()?;
    let jobs = resolve_jobs(jobs);
    let start = Instant::now();
    let mut out = fpnet::par::with_workers(jobs, || experiment::run(&cfg))?;
    let manifest = json!({
        "tool": "fpnet",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command.name(),
        "config": cfg,
        "config_source": text,
        "jobs": jobs,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
        "artifacts": out.names(),
    });
    out.json("manifest.json", &manifest)?;
    write_all(&cfg.output_dir, &out.files)?;
    emit(&json!({ "command": cfg.command.name(), "output_dir": cfg.output_dir, "artifacts": out.names() }).to_string());
    Ok(())
}

fn validate(path: &Path, command: Option<Command>) -> Result<(), CliError> {
    let (cfg, _) = load(path, command)?;
    cfg.validate()?;
    emit(&serde_json::to_string_pretty(&cfg.derived())?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.action {
        Action::Run {
            config,
            jobs,
            command,
            output_dir,
        } => run(&config, jobs, command, output_dir),
        Action::Validate { config, command } => validate(&config, command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
