//! Command-line pipeline and local render service.

pub mod bundle;
pub mod cli;
pub mod commands;
pub mod service;

use clap::Parser;

pub use commands::{CliError, CliResult};

/// Parses `argv` and runs the command. Help and version requests come back
/// as `Ok(Some(text))`.
pub fn run<I, T>(argv: I, out: &mut dyn std::io::Write) -> CliResult<Option<String>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let parsed = match cli::Cli::try_parse_from(argv) {
        Ok(p) => p,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    Ok(Some(e.to_string()))
                }
                _ => Err(CliError::new("usage", first_line(&e.to_string()))),
            };
        }
    };
    commands::execute(parsed.command, out)?;
    Ok(None)
}

fn first_line(text: &str) -> String {
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
    line.trim_start_matches("error: ").trim().to_string()
}
