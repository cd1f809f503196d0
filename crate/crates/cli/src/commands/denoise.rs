//! Whole-volume inference with a trained generator.

use std::path::PathBuf;

use clap::Args;
use voxdn_core::data::{denormalize, read_volume, write_volume};
use voxdn_core::models::{Generator, GeneratorConfig, GeneratorVariant};
use voxdn_core::trainer::{denoise_volume, load_checkpoint, restore_values};
use voxdn_core::CoreError;

use crate::config::Settings;
use crate::manifest::{stamp, stamp_input, RunManifest};

use super::{ensure_dir, Outcome, RunContext};

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    /// Volume to denoise
    #[arg(long)]
    pub input: PathBuf,
    /// Trained generator checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output volume file
    #[arg(long)]
    pub out: PathBuf,
    /// Depth stride of the sliding window, 1..=9
    #[arg(long)]
    pub stride: Option<usize>,
    /// key = value settings file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Record the determinism pin in the manifest
    #[arg(long)]
    pub deterministic: bool,
}

pub fn run(args: &DenoiseArgs, ctx: &RunContext) -> Result<Outcome, CoreError> {
    let mut s = Settings::load(args.config.as_deref())?;
    s.set_opt("stride", &args.stride);
    let stride = s.take_or("stride", 1usize)?;
    s.finish()?;

    let (loaded, meta) = load_checkpoint(&args.checkpoint)?;
    let variant = GeneratorVariant::parse(&meta.model).map_err(|_| {
        CoreError::config(format!(
            "{}: holds a {:?} model, not a generator",
            args.checkpoint.display(),
            meta.model
        ))
    })?;
    let config = GeneratorConfig {
        variant,
        channels: meta.channels,
        skip_plan: meta.skip_plan.clone(),
    };
    let mut gen = Generator::build(config, 0)?;
    gen.set_values(restore_values(gen.params(), &loaded)?)?;

    if !(meta.intensity_scale > 0.0 && meta.intensity_scale.is_finite()) {
        return Err(CoreError::format(format!(
            "{}: checkpoint intensity scale {} is unusable",
            args.checkpoint.display(),
            meta.intensity_scale
        )));
    }
    let vol = read_volume(&args.input)?;
    // same normalization the generator was trained under
    let mut normalized = vol.clone();
    for v in normalized.data_mut() {
        *v /= meta.intensity_scale;
    }
    let denoised = denoise_volume(&gen, &normalized, stride)?;
    let restored = denormalize(&denoised, meta.intensity_scale)?;

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    write_volume(&restored, &args.out)?;

    let out_root = args.out.parent().unwrap_or(std::path::Path::new("")).to_path_buf();
    let mut config_map = std::collections::BTreeMap::new();
    config_map.insert("stride".to_string(), stride.to_string());
    config_map.insert("model".to_string(), meta.model.clone());
    let manifest = RunManifest {
        command: "denoise".to_string(),
        argv: ctx.argv.clone(),
        config: config_map,
        seed: meta.seed,
        deterministic: args.deterministic,
        inputs: vec![stamp_input(&args.input)?, stamp_input(&args.checkpoint)?],
        outputs: vec![stamp(&out_root, &args.out)?],
        duration_s: ctx.elapsed_s(),
        diverged: false,
    };
    manifest.write(&args.out.with_extension("manifest.json"))?;

    println!(
        "denoised {} with {} (stride {stride}) -> {}",
        args.input.display(),
        meta.model,
        args.out.display()
    );
    Ok(Outcome::ok())
}
