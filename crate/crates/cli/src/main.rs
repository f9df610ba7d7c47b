//! `oboi` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal failure. Errors are reported on stderr as one JSON object.

mod args;
mod commands;

use std::fmt::Display;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use oboi_core::Error;

use args::{Cli, Command};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl Failure {
    fn new(code: u8, kind: &str, message: impl Display) -> Self {
        Failure {
            code,
            kind: kind.to_string(),
            message: message.to_string(),
        }
    }

    pub fn usage(message: impl Display) -> Self {
        Failure::new(EXIT_USAGE, "Usage", message)
    }

    pub fn invalid(message: impl Display) -> Self {
        Failure::new(EXIT_DATA, "Validation", message)
    }

    pub fn internal(message: impl Display) -> Self {
        Failure::new(EXIT_INTERNAL, "Internal", message)
    }

    fn report(&self) -> ExitCode {
        let body = serde_json::json!({
            "error": { "code": self.code, "kind": self.kind, "message": self.message }
        });
        eprintln!("{body}");
        ExitCode::from(self.code)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure::new(code, e.kind(), &e)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(Failure::internal)?;
    }
    match &cli.command {
        Command::GenSynthetic {
            spec_path,
            out_dir,
            seed,
        } => commands::gen_synthetic(spec_path, out_dir, *seed),
        Command::BuildBag {
            manifest,
            out_bag,
            episode,
            reduction,
            head,
        } => commands::build_bag(manifest, out_bag, episode, reduction, head),
        Command::Evaluate {
            bag_path,
            split,
            table,
        } => commands::evaluate_bag(bag_path, (*split).into(), *table),
        Command::Sweep(args) => commands::sweep(args),
        Command::Validate { path } => commands::validate(path),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return Failure::usage(e.kind()).report();
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => f.report(),
        Err(_) => Failure::internal("unexpected panic").report(),
    }
}
