//! Subcommand definitions and dispatch.

pub mod ablate;
pub mod denoise;
pub mod evaluate;
pub mod gen_data;
pub mod pretrain;
pub mod replay;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use voxdn_core::data::{read_volume, VolumePair};
use voxdn_core::CoreError;

#[derive(Parser, Debug)]
#[command(
    name = "voxdn",
    version,
    about = "Volumetric low-dose denoising: synthetic data, training, evaluation, replay"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize paired low/normal-dose phantom volumes
    GenData(gen_data::GenDataArgs),
    /// Pretrain a generator with a supervised fidelity loss
    Pretrain(pretrain::PretrainArgs),
    /// Adversarially refine a generator against a critic
    Train(train::TrainArgs),
    /// Run a trained generator over a whole volume
    Denoise(denoise::DenoiseArgs),
    /// Score a volume against its reference
    Evaluate(evaluate::EvaluateArgs),
    /// Train and score several architectures under one budget
    Ablate(ablate::AblateArgs),
    /// Re-run a recorded manifest and verify the outputs match
    Replay(replay::ReplayArgs),
}

/// What the process should report after a command ran to completion.
/// Exit 4 flags a run whose artifacts exist but demand scrutiny: training
/// that diverged, or a replay that failed to reproduce its outputs.
pub struct Outcome {
    pub code: i32,
    pub message: Option<String>,
}

impl Outcome {
    pub fn ok() -> Self {
        Outcome { code: 0, message: None }
    }

    pub fn suspect(message: impl Into<String>) -> Self {
        Outcome { code: 4, message: Some(message.into()) }
    }
}

pub struct RunContext {
    pub argv: Vec<String>,
    pub start: Instant,
}

impl RunContext {
    pub fn new(argv: Vec<String>) -> Self {
        RunContext { argv, start: Instant::now() }
    }

    pub fn elapsed_s(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

pub fn dispatch(command: &Command, ctx: &RunContext) -> Result<Outcome, CoreError> {
    match command {
        Command::GenData(args) => gen_data::run(args, ctx),
        Command::Pretrain(args) => pretrain::run(args, ctx),
        Command::Train(args) => train::run(args, ctx),
        Command::Denoise(args) => denoise::run(args, ctx),
        Command::Evaluate(args) => evaluate::run(args, ctx),
        Command::Ablate(args) => ablate::run(args, ctx),
        Command::Replay(args) => replay::run(args, ctx),
    }
}

// init streams so the generator, the critic and the data never share a seed
pub(crate) const STREAM_GENERATOR_INIT: u64 = 0x01;
pub(crate) const STREAM_CRITIC_INIT: u64 = 0x02;

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> CoreError {
    CoreError::format(format!("{}: {e}", path.display()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CoreError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub(crate) fn ensure_dir(path: &Path) -> Result<(), CoreError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub(crate) fn pair_file_names(index: usize) -> (String, String) {
    (format!("pair_{index:02}_low.pvol"), format!("pair_{index:02}_normal.pvol"))
}

/// Loads `pair_NN_low.pvol` / `pair_NN_normal.pvol` couples in index order.
/// Returns the pairs plus the paths that were read, for manifest stamps.
pub(crate) fn load_pairs(dir: &Path) -> Result<(Vec<VolumePair>, Vec<PathBuf>), CoreError> {
    let mut indices = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(rest) = name.strip_prefix("pair_") {
            if let Some(idx) = rest.strip_suffix("_low.pvol") {
                if let Ok(i) = idx.parse::<usize>() {
                    indices.push(i);
                }
            }
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(CoreError::config(format!(
            "no pair_NN_low.pvol volumes found in {}",
            dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(indices.len());
    let mut paths = Vec::with_capacity(indices.len() * 2);
    for i in indices {
        let (low_name, normal_name) = pair_file_names(i);
        let low_path = dir.join(low_name);
        let normal_path = dir.join(normal_name);
        let low = read_volume(&low_path)?;
        let normal = read_volume(&normal_path)?;
        pairs.push(VolumePair::new(low, normal)?);
        paths.push(low_path);
        paths.push(normal_path);
    }
    Ok((pairs, paths))
}
