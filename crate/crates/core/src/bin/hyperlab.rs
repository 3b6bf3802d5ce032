use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use hyperlab::lab::{execute, Command, ModeName, Overrides, EXIT_ERROR};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Aperiodicity,
    CheckHc,
    CheckDhc,
    Dcriterion,
    Probe,
    Construct,
    Extract,
    Synthesize,
    Orbit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Paper,
    OneDirectional,
}

/// Run one experiment on weighted translations and write its report.
#[derive(Debug, Parser)]
#[command(name = "hyperlab", version)]
struct Cli {
    command: Cmd,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.json and CSV series.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Seed for random test functions; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("HYPERLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    let raw = match std::fs::read_to_string(&cli.config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("hyperlab: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    let command = match cli.command {
        Cmd::Aperiodicity => Command::Aperiodicity,
        Cmd::CheckHc => Command::CheckHc,
        Cmd::CheckDhc => Command::CheckDhc,
        Cmd::Dcriterion => Command::Dcriterion,
        Cmd::Probe => Command::Probe,
        Cmd::Construct => Command::Construct,
        Cmd::Extract => Command::Extract,
        Cmd::Synthesize => Command::Synthesize,
        Cmd::Orbit => Command::Orbit,
    };
    let overrides = Overrides {
        command: Some(command),
        mode: cli.mode.map(|m| match m {
            Mode::Paper => ModeName::Paper,
            Mode::OneDirectional => ModeName::OneDirectional,
        }),
        seed: cli.seed,
    };
    match execute(&raw, &overrides, &cli.out) {
        Ok(code) => {
            let report = cli.out.join("report.json");
            eprintln!(
                "hyperlab: {command} finished with exit code {code}; report at {}",
                report.display()
            );
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("hyperlab: cannot write to {}: {e}", cli.out.display());
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
