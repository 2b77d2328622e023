mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use rksindy::Error;

use args::{Cli, Command};

/// 1 for numerical failures, 2 for bad input or configuration.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. }
        | Error::Stage { .. }
        | Error::NonFiniteFeature { .. }
        | Error::NonFiniteGradient { .. }
        | Error::OptimizerDivergence { .. } => 1,
        _ => 2,
    }
}

fn diagnostic(e: &Error) -> serde_json::Value {
    let mut v = serde_json::json!({ "error": e.to_string(), "exit_code": exit_code(e) });
    if let Error::OptimizerDivergence { iteration, loss, last_finite } = e {
        v["iteration"] = (*iteration).into();
        v["loss"] = (*loss).into();
        v["last_finite"] = serde_json::json!(last_finite);
    }
    v
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Discover(a) => commands::discover(a),
        Command::Compare(a) => commands::compare(a),
        Command::AssessDegree { run, max_degree } => commands::assess_degree(run, *max_degree),
        Command::Sweep { run, lambdas } => commands::sweep(run, lambdas),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let diag = diagnostic(&e);
            eprintln!("{}", serde_json::to_string_pretty(&diag).unwrap_or_default());
            ExitCode::from(exit_code(&e))
        }
    }
}
