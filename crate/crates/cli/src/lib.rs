//! The `mvc` command-line tool: synthetic corpora, embedding pretraining,
//! training, evaluation, Hyperband search, ablations and linear baselines.
//!
//! Every command writes its outputs to files together with a JSON manifest
//! recording the resolved configuration, the seed and input checksums.

use std::ffi::OsString;

use clap::Parser;
use mvc_core::{Error, ErrorClass};

mod args;
mod commands;
mod config;
mod manifest;
mod pipeline;

pub use args::Cli;
pub use config::ENV_PREFIX;
pub use manifest::{InputFile, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MVC_LOG", "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` (including the program name) and runs the command, returning
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging();
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
