//! `sdpca` command-line driver.
//!
//! Data goes to files under `--out` (and, for `ingest`/`forecast`, to
//! standard output); progress goes to standard error. Failures print a single
//! JSON error record to standard error and exit nonzero.

mod commands;
mod grid;
mod settings;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use log::info;
use serde_json::json;

use settings::{resolve, Cli, Command, RunConfig};

/// Exit status for a run that completed but left report cells without a value.
const EXIT_HARD_ERRORS: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    kind: String,
    message: String,
    status: u8,
}

impl CliError {
    fn config(message: String) -> Self {
        Self {
            kind: "InvalidConfig".into(),
            message,
            status: 2,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            kind: "Io".into(),
            message: format!("{}: {e}", path.display()),
            status: 1,
        }
    }
}

impl From<sdpca::Error> for CliError {
    fn from(e: sdpca::Error) -> Self {
        let debug = format!("{e:?}");
        let kind = debug
            .split(|c: char| !c.is_ascii_alphanumeric())
            .next()
            .unwrap_or("Error")
            .to_string();
        Self {
            kind,
            message: e.to_string(),
            status: 1,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self {
            kind: "Serialization".into(),
            message: e.to_string(),
            status: 1,
        }
    }
}

fn error_record(command: &str, e: &CliError) -> String {
    json!({
        "error": {"kind": e.kind, "message": e.message},
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
    })
    .to_string()
}

fn write_manifest(cfg: &RunConfig, outcome: &commands::Outcome) -> Result<(), CliError> {
    let path = cfg.out.join("manifest.jsonl");
    let mut lines = vec![json!({
        "command": cfg.command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "rng": sdpca::simgen::RNG_ALGORITHM,
        "config": cfg,
        "hard_errors": outcome.hard_errors,
    })
    .to_string()];
    for p in &outcome.outputs {
        let bytes = fs::metadata(p).map(|m| m.len()).unwrap_or(0);
        lines.push(json!({"output": p, "bytes": bytes}).to_string());
    }
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    fs::write(&path, lines.join("\n") + "\n").map_err(|e| CliError::io(&path, e))
}

fn run(cli: &Cli) -> Result<commands::Outcome, CliError> {
    let cfg = resolve(&cli.command)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = cfg.jobs {
            b = b.num_threads(j);
        }
        b.build().map_err(|e| CliError::config(e.to_string()))?
    };
    let outcome = pool.install(|| match &cli.command {
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Ingest(_) => commands::ingest(&cfg),
        Command::Forecast(_) => commands::forecast(&cfg),
        Command::Evaluate(_) => commands::evaluate(&cfg),
        Command::ScanR2(_) => commands::scan_r2(&cfg),
    })?;
    write_manifest(&cfg, &outcome)?;
    info!(
        "{}: wrote {} file(s) to {}",
        cfg.command,
        outcome.outputs.len() + 1,
        cfg.out.display()
    );
    Ok(outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError {
                kind: "Usage".into(),
                message: e.to_string(),
                status: 2,
            };
            eprintln!("{}", error_record("", &err));
            return ExitCode::from(err.status);
        }
    };
    match run(&cli) {
        Ok(outcome) if outcome.hard_errors > 0 => {
            let err = CliError {
                kind: "HardErrorCells".into(),
                message: format!("{} report cell(s) could not be computed", outcome.hard_errors),
                status: EXIT_HARD_ERRORS,
            };
            eprintln!("{}", error_record(cli.command.name(), &err));
            ExitCode::from(err.status)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_record(cli.command.name(), &err));
            ExitCode::from(err.status)
        }
    }
}
