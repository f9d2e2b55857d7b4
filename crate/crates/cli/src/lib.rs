//! Command-line front end for extraction audits.

pub mod args;
pub mod audit;
pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_GUARD: i32 = 4;

/// Invalid flags, inputs, or configuration detected by the front end.
#[derive(Debug)]
pub struct ConfigError(String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<extraction_audit::Error>() {
            return match e {
                extraction_audit::Error::GuardExceeded { .. } => EXIT_GUARD,
                e if e.is_provider_failure() => EXIT_PROVIDER,
                _ => EXIT_CONFIG,
            };
        }
    }
    1
}

/// Parses `args`, runs the command, reports to stdout/stderr, and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(&cli.command) {
        Ok(message) => {
            if !message.is_empty() {
                println!("{message}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
