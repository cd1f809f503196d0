//! Command-line front end over the denoising library: dataset synthesis,
//! training, inference, evaluation and bit-exact run replay.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{dispatch, Cli, Command, Outcome, RunContext};
