//! Command-line front end for the trajectory clustering pipeline.

pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

use crate::commands::{execute, Cli};
use crate::error::CliError;

/// Parses `args`, runs the subcommand and returns the process exit code:
/// 0 on success, 1 for usage errors, 2 for data or I/O errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    if let Err(e) = configure_threads(cli.threads).and_then(|_| execute(&cli.command)) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    0
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    match threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            // A pool built earlier in the same process is kept.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(())
        }
        None => Ok(()),
    }
}
