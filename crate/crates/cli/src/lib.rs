//! The `pano` command line.
//!
//! Every subcommand writes a `run_manifest.json` into its output directory
//! recording the argv, the resolved configuration, the seed, content hashes
//! of the inputs and the files it produced, which is enough to re-run it.
//!
//! Exit status is 0 on success, 1 for usage, configuration or validation
//! errors and 2 for runtime failures.

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

mod commands;
pub mod config;
mod error;
mod images;
pub mod manifest;

pub use commands::Command;
pub use error::{exit_code_for, UsageError, EXIT_RUNTIME, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "pano", version, about = "Synthetic panoramic radiograph workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Parses `args` (program name first), runs the command and maps the
/// outcome to an exit status.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match cli.command.execute(&argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
