use std::process::exit;

use clap::Parser;
use voxdn_cli::{dispatch, Cli, RunContext};
use voxdn_core::CoreError;

// exit codes: 0 ok, 2 bad configuration or arguments (clap uses 2 as
// well), 3 unreadable or corrupt files, 4 artifacts written but suspect
// (divergence, replay mismatch)
fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    let ctx = RunContext::new(argv);
    match dispatch(&cli.command, &ctx) {
        Ok(outcome) => {
            if let Some(message) = &outcome.message {
                eprintln!("{message}");
            }
            exit(outcome.code);
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit(match err {
                CoreError::Config(_) | CoreError::Tensor(_) => 2,
                CoreError::Io(_) | CoreError::Format(_) => 3,
            });
        }
    }
}
