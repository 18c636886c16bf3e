use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pwe_core::scenario_io::{compare_reports, emit_report, load_scenario, metrics_text, run, Mode, RunOptions, ScenarioError};

#[derive(Parser)]
#[command(name = "pwe", about = "Programmable wireless environment simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pwe,
    Natural,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write report files.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "pwe")]
        mode: ModeArg,
        /// Output directory; metrics go to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Cap on trajectory steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Worker threads (defaults to PWE_WORKERS, then all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// Per-pair received power difference between two reports.
    Compare { a: PathBuf, b: PathBuf },
}

fn exit_for(e: &ScenarioError) -> ExitCode {
    eprintln!("error: {}", e);
    if e.is_validation() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { scenario, mode, out, seed, steps, workers } => {
            let sc = match load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => return exit_for(&e),
            };
            let mode = match mode {
                ModeArg::Pwe => Mode::Pwe,
                ModeArg::Natural => Mode::Natural,
            };
            let report = match run(&sc, mode, &RunOptions { seed, steps, workers }) {
                Ok(r) => r,
                Err(e) => return exit_for(&e),
            };
            match out {
                Some(dir) => match emit_report(&report, &dir) {
                    Ok(files) => {
                        for f in files {
                            println!("{}", f.display());
                        }
                    }
                    Err(e) => return exit_for(&e),
                },
                None => print!("{}", metrics_text(&report)),
            }
            ExitCode::SUCCESS
        }
        Cmd::Validate { scenario } => match load_scenario(&scenario) {
            Ok(sc) => {
                println!("ok: {} users, {} pairs", sc.users.len(), sc.pairs.len());
                ExitCode::SUCCESS
            }
            Err(e) => exit_for(&e),
        },
        Cmd::Compare { a, b } => match compare_reports(&a, &b) {
            Ok(s) => {
                print!("{}", s);
                ExitCode::SUCCESS
            }
            Err(e) => exit_for(&e),
        },
    }
}
