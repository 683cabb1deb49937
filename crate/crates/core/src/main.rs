use std::process::ExitCode;

use clap::Parser;
use hilfer_core::cli::{run, Args};

fn main() -> ExitCode {
    ExitCode::from(run(&Args::parse()))
}
