//! `tarspot`: batch front end for ground truthing, detection, calibration,
//! evaluation and dataset preparation.
//!
//! Every command prints one JSON summary on stdout. Exit codes: 0 success,
//! 2 usage error, 3 some inputs failed, 4 nothing succeeded or a fatal error.

mod args;
mod batch;
mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use batch::Summary;
use config::RunConfig;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FAILURE: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Fatal(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Fatal(e)
    }
}

impl From<tarspot::Error> for CliError {
    fn from(e: tarspot::Error) -> Self {
        CliError::Fatal(e.into())
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Groundtruth(_) => "groundtruth",
        Command::Detect(_) => "detect",
        Command::Calibrate(_) => "calibrate",
        Command::Eval(_) => "eval",
        Command::Export(_) => "export",
        Command::Split(_) => "split",
        Command::Overlay(_) => "overlay",
        Command::Bench(_) => "bench",
        Command::Synth(_) => "synth",
    }
}

fn run(cli: &Cli) -> Result<Summary, CliError> {
    let cfg = RunConfig::resolve(&cli.global)?;
    cfg.install_thread_pool();
    match &cli.command {
        Command::Groundtruth(a) => commands::groundtruth(a, cfg),
        Command::Detect(a) => commands::detect(a, cfg),
        Command::Calibrate(a) => commands::calibrate(a, cfg),
        Command::Eval(a) => commands::eval(a, cfg),
        Command::Export(a) => commands::export(a, cfg),
        Command::Split(a) => commands::split(a, cfg),
        Command::Overlay(a) => commands::overlay(a, cfg),
        Command::Bench(a) => commands::bench(a, cfg),
        Command::Synth(a) => commands::synth(a, cfg),
    }
}

// A closed stdout (e.g. piped into `head`) must not turn into a panic.
fn print_json(value: &serde_json::Value) {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let name = command_name(&cli.command);
    match run(&cli) {
        Ok(summary) => {
            print_json(&summary.to_json());
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            let (code, message) = match e {
                CliError::Usage(m) => (EXIT_USAGE, m),
                CliError::Fatal(e) => (EXIT_FAILURE, format!("{e:#}")),
            };
            eprintln!("tarspot {name}: {message}");
            print_json(&serde_json::json!({ "command": name, "error": message }));
            ExitCode::from(code)
        }
    }
}
