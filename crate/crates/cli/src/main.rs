mod args;
mod commands;
mod config;

use clap::error::ErrorKind;
use clap::Parser;
use std::ffi::OsString;
use std::process::ExitCode;

use args::{Cli, Command};

/// Failure with its exit status: 1 for bad input, 2 for internal errors.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    /// Output could not be written.
    pub fn write(e: pamm_core::io::IoError) -> Self {
        CliError::internal(format!("write failed: {e}"))
    }
}

fn run(argv: Vec<OsString>) -> Result<(), CliError> {
    let argv = config::merge_config(argv)?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return {
            let text = e.render().to_string();
            Err(CliError::user(text.trim_end().trim_start_matches("error: ")))
        },
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::user("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::AsPed(a) => commands::as_ped_cmd(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Fit(a) => commands::fit_cmd(a),
        Command::Predict(a) => commands::predict_cmd(a),
        Command::CumuCoef(a) => commands::cumu_coef_cmd(a),
        Command::LagLead(a) => commands::lag_lead_cmd(a),
        Command::Info(a) => commands::info_cmd(a),
    }
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    std::panic::set_hook(Box::new(|info| eprintln!("pamm: internal error: {info}")));
    match std::panic::catch_unwind(|| run(argv)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("pamm: error: {}", e.message);
            ExitCode::from(e.code)
        }
        Err(_) => ExitCode::from(2),
    }
}
