use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    vigil_gcs::cli::run(vigil_gcs::cli::Cli::parse())
}
