mod args;
mod commands;
mod parse;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(nqs_core::Error),
}

impl From<nqs_core::Error> for CliError {
    fn from(e: nqs_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        use nqs_core::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                E::Domain(_) => "domain",
                E::NonFinite { .. } => "non-finite",
                E::Unstable { .. } => "unstable",
                E::InvalidArgument(_) => "invalid-argument",
                E::Data(_) => "data",
                E::Underdetermined { .. } => "underdetermined",
                E::FitFailure(_) => "fit-failure",
                E::Infeasible(_) => "infeasible",
                E::Io(_) => "io",
                E::Parse(_) => "parse",
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(_) => 1,
        }
    }
}

/// `error[kind]: message` on one line.
fn report(err: &CliError) -> ExitCode {
    let flat = err
        .message()
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    eprintln!("error[{}]: {}", err.kind(), flat);
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let body = text
                .split("\n\nUsage:")
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_string();
            return report(&CliError::Usage(body));
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            return report(&CliError::Usage(format!("thread pool: {e}")));
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Allocate(a) => commands::allocate(a),
        Command::Isoflop(a) => commands::isoflop(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Generate(a) => commands::generate(a),
        Command::BaselineChinchilla(a) => commands::baseline(a),
        Command::Bootstrap(a) => commands::bootstrap(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
