//! Supervised generator pretraining.

use std::path::PathBuf;

use clap::Args;
use voxdn_core::data::{derive_seed, normalization_scale, normalize_pair, train_test_split};
use voxdn_core::models::{Generator, DEPTH_WINDOW};
use voxdn_core::trainer::{pretrain_generator, save_checkpoint, CheckpointMeta, PretrainConfig};
use voxdn_core::CoreError;

use crate::config::{Settings, TrainingSettings};
use crate::manifest::{stamp, stamp_input, RunManifest};

use super::{ensure_dir, load_pairs, write_json, Outcome, RunContext, STREAM_GENERATOR_INIT};

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Directory of pair_NN_{low,normal}.pvol volumes
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint, log and manifest
    #[arg(long)]
    pub out: PathBuf,
    /// key = value settings file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generator variant: hybrid, pure2d or pure3d
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Skip-connection plan: default, full or none
    #[arg(long)]
    pub skips: Option<String>,
    /// Fidelity objective: mse, ssim or perceptual
    #[arg(long)]
    pub loss: Option<String>,
    /// Adam learning rate
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Patches visited per epoch when steps is not given
    #[arg(long)]
    pub patches: Option<usize>,
    /// Exact optimizer steps; overrides epochs * patches / batch
    #[arg(long)]
    pub steps: Option<usize>,
    /// Patch height and width in voxels
    #[arg(long)]
    pub patch_hw: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Preset for clinical-scale batch and epoch budget
    #[arg(long)]
    pub full_scale: bool,
    /// Record the determinism pin in the manifest
    #[arg(long)]
    pub deterministic: bool,
}

pub fn run(args: &PretrainArgs, ctx: &RunContext) -> Result<Outcome, CoreError> {
    let mut s = Settings::load(args.config.as_deref())?;
    s.set_opt("variant", &args.variant);
    s.set_opt("channels", &args.channels);
    s.set_opt("skips", &args.skips);
    s.set_opt("loss", &args.loss);
    s.set_opt("alpha", &args.alpha);
    s.set_opt("batch", &args.batch);
    s.set_opt("epochs", &args.epochs);
    s.set_opt("patches", &args.patches);
    s.set_opt("steps", &args.steps);
    s.set_opt("patch_hw", &args.patch_hw);
    s.set_opt("seed", &args.seed);
    if args.full_scale {
        s.set_default("batch", 80);
        s.set_default("epochs", 40);
        s.set_default("patches", 169_000);
        s.set_default("patch_hw", 64);
    }
    let t = TrainingSettings::from_settings(&mut s, 1e-4)?;
    s.finish()?;

    let (pairs, pair_paths) = load_pairs(&args.data)?;
    let (n_train, _) = train_test_split(pairs.len())?;
    let scale = normalization_scale(&pairs[..n_train])?;
    let train: Vec<_> = pairs[..n_train]
        .iter()
        .map(|p| normalize_pair(p, scale))
        .collect::<Result<_, _>>()?;

    let gen_config = t.model.generator_config();
    let mut gen =
        Generator::build(gen_config.clone(), derive_seed(t.seed, STREAM_GENERATOR_INIT))?;
    let steps = t.pretrain_steps();
    let cfg = PretrainConfig {
        loss: t.loss,
        alpha: t.alpha,
        batch: t.batch,
        steps,
        patch: [DEPTH_WINDOW, t.patch_hw, t.patch_hw],
        seed: t.seed,
    };
    let log = pretrain_generator(&mut gen, &train, &cfg)?;

    ensure_dir(&args.out)?;
    let meta = CheckpointMeta {
        model: gen_config.variant.name().to_string(),
        channels: gen_config.channels,
        skip_plan: gen_config.skip_plan.clone(),
        phase: "pretrain".to_string(),
        loss: t.loss.name().to_string(),
        epochs: t.epochs,
        seed: t.seed,
        intensity_scale: scale,
    };
    let ckpt_path = args.out.join("generator-pretrained.ptwg");
    save_checkpoint(&ckpt_path, gen.params(), &meta)?;
    let log_path = args.out.join("pretrain-log.json");
    write_json(&log_path, &log)?;

    let mut inputs = Vec::new();
    if let Some(cfg_path) = &args.config {
        inputs.push(stamp_input(cfg_path)?);
    }
    for p in &pair_paths {
        inputs.push(stamp_input(p)?);
    }
    let outputs = vec![stamp(&args.out, &ckpt_path)?, stamp(&args.out, &log_path)?];
    let manifest = RunManifest {
        command: "pretrain".to_string(),
        argv: ctx.argv.clone(),
        config: t.resolved(&gen_config),
        seed: t.seed,
        deterministic: args.deterministic,
        inputs,
        outputs,
        duration_s: ctx.elapsed_s(),
        diverged: log.diverged,
    };
    manifest.write(&args.out.join("pretrain.manifest.json"))?;

    let final_loss = log.steps.last().map(|r| r.loss);
    println!(
        "pretrained {} ({} params) for {} steps{} -> {}",
        gen_config.variant.name(),
        gen.count_parameters(),
        log.g_steps_total,
        final_loss.map(|l| format!(", final loss {l:.6}")).unwrap_or_default(),
        ckpt_path.display()
    );
    if log.diverged {
        return Ok(Outcome::suspect(
            "training diverged; the checkpoint holds the last stable weights",
        ));
    }
    Ok(Outcome::ok())
}
