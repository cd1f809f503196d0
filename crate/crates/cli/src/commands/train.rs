//! Adversarial training with gradient penalty, from scratch or from a
//! pretrained checkpoint.

use std::path::PathBuf;

use clap::{ArgGroup, Args};
use voxdn_core::data::{derive_seed, normalization_scale, normalize_pair, train_test_split};
use voxdn_core::losses::LossWeights;
use voxdn_core::models::{Discriminator, Generator, DEPTH_WINDOW};
use voxdn_core::trainer::{
    load_checkpoint, restore_values, save_checkpoint, train_wgan, CheckpointMeta, WganConfig,
};
use voxdn_core::CoreError;

use crate::config::{Settings, TrainingSettings};
use crate::manifest::{stamp, stamp_input, RunManifest};

use super::{
    ensure_dir, load_pairs, write_json, Outcome, RunContext, STREAM_CRITIC_INIT,
    STREAM_GENERATOR_INIT,
};

#[derive(Args, Debug)]
#[command(group = ArgGroup::new("start").required(true).args(["init", "from_scratch"]))]
pub struct TrainArgs {
    /// Directory of pair_NN_{low,normal}.pvol volumes
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints, log and manifest
    #[arg(long)]
    pub out: PathBuf,
    /// Pretrained generator checkpoint to start from
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Start from freshly initialized weights instead
    #[arg(long)]
    pub from_scratch: bool,
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
    /// Exact generator steps; overrides the epoch budget
    #[arg(long)]
    pub steps: Option<usize>,
    /// Critic updates per generator update
    #[arg(long)]
    pub d_steps_per_g: Option<usize>,
    /// Gradient-penalty weight
    #[arg(long)]
    pub lambda_gp: Option<f64>,
    /// Fidelity weight; "inf" trains without the critic
    #[arg(long)]
    pub lambda_m: Option<f64>,
    /// Patch height and width in voxels
    #[arg(long)]
    pub patch_hw: Option<usize>,
    /// Width of the critic's first stage; later stages double it
    #[arg(long)]
    pub critic_channels: Option<usize>,
    /// Width of the critic's hidden dense layer
    #[arg(long)]
    pub critic_dense: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Preset for clinical-scale batch and epoch budget
    #[arg(long)]
    pub full_scale: bool,
    /// Record the determinism pin in the manifest
    #[arg(long)]
    pub deterministic: bool,
}

pub fn run(args: &TrainArgs, ctx: &RunContext) -> Result<Outcome, CoreError> {
    let mut s = Settings::load(args.config.as_deref())?;
    s.set_opt("variant", &args.variant);
    s.set_opt("channels", &args.channels);
    s.set_opt("skips", &args.skips);
    s.set_opt("alpha", &args.alpha);
    s.set_opt("batch", &args.batch);
    s.set_opt("epochs", &args.epochs);
    s.set_opt("patches", &args.patches);
    s.set_opt("steps", &args.steps);
    s.set_opt("d_steps_per_g", &args.d_steps_per_g);
    s.set_opt("lambda_gp", &args.lambda_gp);
    s.set_opt("lambda_m", &args.lambda_m);
    s.set_opt("patch_hw", &args.patch_hw);
    s.set_opt("critic_channels", &args.critic_channels);
    s.set_opt("critic_dense", &args.critic_dense);
    s.set_opt("seed", &args.seed);
    if args.full_scale {
        s.set_default("batch", 80);
        s.set_default("epochs", 30);
        s.set_default("patches", 169_000);
        s.set_default("patch_hw", 64);
    }
    let t = TrainingSettings::from_settings(&mut s, 1e-5)?;
    s.finish()?;

    let (pairs, pair_paths) = load_pairs(&args.data)?;
    let (n_train, _) = train_test_split(pairs.len())?;

    // A restored generator keeps the normalization it was trained under so
    // its weights keep seeing the same intensity statistics; a scratch run
    // derives the scale from its own training volumes.
    let (mut gen, gen_config, scale) = match &args.init {
        Some(init_path) => {
            let (loaded, meta) = load_checkpoint(init_path)?;
            if !(meta.intensity_scale > 0.0 && meta.intensity_scale.is_finite()) {
                return Err(CoreError::format(format!(
                    "{}: checkpoint intensity scale {} is unusable",
                    init_path.display(),
                    meta.intensity_scale
                )));
            }
            let config = t.model.generator_config_from(&meta)?;
            let mut gen = Generator::build(config.clone(), 0)?;
            let values = restore_values(gen.params(), &loaded)?;
            gen.set_values(values)?;
            (gen, config, meta.intensity_scale)
        }
        None => {
            let config = t.model.generator_config();
            let gen =
                Generator::build(config.clone(), derive_seed(t.seed, STREAM_GENERATOR_INIT))?;
            let scale = normalization_scale(&pairs[..n_train])?;
            (gen, config, scale)
        }
    };
    let train: Vec<_> = pairs[..n_train]
        .iter()
        .map(|p| normalize_pair(p, scale))
        .collect::<Result<_, _>>()?;

    let mut critic =
        Discriminator::build(t.critic_config(), derive_seed(t.seed, STREAM_CRITIC_INIT))?;

    let weights = LossWeights { lambda_gp: t.lambda_gp, lambda_m: t.lambda_m };
    let cfg = WganConfig {
        alpha: t.alpha,
        batch: t.batch,
        g_steps: t.wgan_g_steps(),
        d_steps_per_g: t.d_steps_per_g,
        weights,
        patch: [DEPTH_WINDOW, t.patch_hw, t.patch_hw],
        seed: t.seed,
    };
    let log = train_wgan(&mut gen, &mut critic, &train, &cfg)?;

    ensure_dir(&args.out)?;
    let loss_name = if t.lambda_m.is_infinite() {
        "mse".to_string()
    } else if t.lambda_m == 0.0 {
        "wasserstein".to_string()
    } else {
        "wasserstein+mse".to_string()
    };
    let gen_meta = CheckpointMeta {
        model: gen_config.variant.name().to_string(),
        channels: gen_config.channels,
        skip_plan: gen_config.skip_plan.clone(),
        phase: "wgan".to_string(),
        loss: loss_name.clone(),
        epochs: t.epochs,
        seed: t.seed,
        intensity_scale: scale,
    };
    let gen_path = args.out.join("generator-wgan.ptwg");
    save_checkpoint(&gen_path, gen.params(), &gen_meta)?;
    let critic_meta = CheckpointMeta {
        model: "critic".to_string(),
        channels: 0,
        skip_plan: Vec::new(),
        phase: "wgan".to_string(),
        loss: loss_name,
        epochs: t.epochs,
        seed: t.seed,
        intensity_scale: scale,
    };
    let critic_path = args.out.join("critic-wgan.ptwg");
    save_checkpoint(&critic_path, critic.params(), &critic_meta)?;
    let log_path = args.out.join("train-log.json");
    write_json(&log_path, &log)?;

    let mut inputs = Vec::new();
    if let Some(cfg_path) = &args.config {
        inputs.push(stamp_input(cfg_path)?);
    }
    if let Some(init_path) = &args.init {
        inputs.push(stamp_input(init_path)?);
    }
    for p in &pair_paths {
        inputs.push(stamp_input(p)?);
    }
    let outputs = vec![
        stamp(&args.out, &gen_path)?,
        stamp(&args.out, &critic_path)?,
        stamp(&args.out, &log_path)?,
    ];
    let manifest = RunManifest {
        command: "train".to_string(),
        argv: ctx.argv.clone(),
        config: t.resolved(&gen_config),
        seed: t.seed,
        deterministic: args.deterministic,
        inputs,
        outputs,
        duration_s: ctx.elapsed_s(),
        diverged: log.diverged,
    };
    manifest.write(&args.out.join("train.manifest.json"))?;

    println!(
        "trained {} for {} generator / {} critic steps -> {}",
        gen_config.variant.name(),
        log.g_steps_total,
        log.d_steps_total,
        gen_path.display()
    );
    if log.diverged {
        return Ok(Outcome::suspect(
            "training diverged; the checkpoints hold the last stable weights",
        ));
    }
    Ok(Outcome::ok())
}
