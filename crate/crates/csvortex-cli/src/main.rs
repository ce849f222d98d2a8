mod args;
mod commands;

use args::{Cli, Command};
use clap::Parser;
use commands::{CliError, Report, RunConfig, Status};
use std::path::Path;
use std::process::ExitCode;

/// Overrides `--threads` when set.
const THREADS_ENV: &str = "CSVORTEX_THREADS";

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer (got `{v}`)"))),
        },
        Err(_) => match flag {
            Some(0) => Err(CliError::Usage("--threads must be positive".into())),
            other => Ok(other),
        },
    }
}

fn write_files(dir: &Path, report: &Report) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    for f in &report.files {
        std::fs::write(dir.join(&f.name), &f.contents)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<Report, CliError> {
    let cfg = RunConfig::new(&cli.global)?;
    if let Some(n) = thread_count(cli.global.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Numeric(format!("thread pool: {e}")))?;
    }
    let report = match &cli.command {
        Command::SolveScalar(a) => commands::solve_scalar(a, &cfg),
        Command::SolveSu3(a) => commands::solve_su3(a, &cfg),
        Command::ScanRegion(a) => commands::scan_region(a, &cfg),
        Command::BuildApprox(a) => commands::build_approx(a, &cfg),
        Command::VerifyIdentities(a) => commands::verify_identities(a, &cfg),
    }?;
    if let Some(dir) = &cli.global.out_dir {
        write_files(dir, &report)?;
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Status::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(report) => {
            print!("{}", report.json);
            if let Some(msg) = &report.diagnostic {
                eprintln!("csvortex: {msg}");
            }
            ExitCode::from(report.status as u8)
        }
        Err(e) => {
            eprintln!("csvortex: {e}");
            ExitCode::from(e.status() as u8)
        }
    }
}
