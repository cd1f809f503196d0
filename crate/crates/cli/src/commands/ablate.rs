//! Architecture/loss/method sweep: trains every candidate under one fixed
//! budget and scores each on a held-out pair.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use voxdn_core::data::{normalization_scale, normalize_pair, train_test_split};
use voxdn_core::losses::LossWeights;
use voxdn_core::models::{GeneratorConfig, GeneratorVariant, DEPTH_WINDOW};
use voxdn_core::trainer::{
    run_ablation, AblationBudget, AblationRow, AblationSpec, PretrainConfig, PretrainLoss,
    TrainMethod, WganConfig,
};
use voxdn_core::CoreError;

use crate::config::{Settings, SkipChoice, TrainingSettings};
use crate::manifest::{stamp, stamp_input, RunManifest};

use super::{ensure_dir, io_err, load_pairs, write_json, Outcome, RunContext};

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Directory of pair_NN_{low,normal}.pvol volumes
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for ablation.json and manifest
    #[arg(long)]
    pub out: PathBuf,
    /// Grid file: one "variant skips loss method" row (or "baseline") per
    /// line; defaults to the built-in nine-row sweep
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// key = value settings file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patches: Option<usize>,
    /// Steps per training phase: supervised rows take it directly,
    /// adversarial rows as generator steps
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub d_steps_per_g: Option<usize>,
    #[arg(long)]
    pub lambda_gp: Option<f64>,
    #[arg(long)]
    pub lambda_m: Option<f64>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub patch_hw: Option<usize>,
    /// Width of the critic's first stage; later stages double it
    #[arg(long)]
    pub critic_channels: Option<usize>,
    /// Width of the critic's hidden dense layer
    #[arg(long)]
    pub critic_dense: Option<usize>,
    /// Depth stride used when scoring the held-out pair
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record the determinism pin in the manifest
    #[arg(long)]
    pub deterministic: bool,
}

/// The reference sweep: a low-dose baseline, the three structures under a
/// supervised objective, the two adversarial mixes trained directly, and
/// transfer-initialized adversarial training from each supervised loss.
fn default_grid(weights: LossWeights) -> Vec<(Option<GeneratorVariant>, SkipChoice, TrainMethod)> {
    let adv = |pretrain| TrainMethod::Adversarial { pretrain, weights };
    vec![
        (None, SkipChoice::Default, TrainMethod::Baseline),
        (Some(GeneratorVariant::Pure2d), SkipChoice::Default, TrainMethod::Supervised(PretrainLoss::Mse)),
        (Some(GeneratorVariant::Pure3d), SkipChoice::Default, TrainMethod::Supervised(PretrainLoss::Mse)),
        (Some(GeneratorVariant::Hybrid), SkipChoice::Default, TrainMethod::Supervised(PretrainLoss::Mse)),
        (
            Some(GeneratorVariant::Hybrid),
            SkipChoice::Default,
            TrainMethod::Adversarial {
                pretrain: None,
                weights: LossWeights { lambda_m: 0.0, ..weights },
            },
        ),
        (Some(GeneratorVariant::Hybrid), SkipChoice::Default, adv(None)),
        (Some(GeneratorVariant::Hybrid), SkipChoice::Default, adv(Some(PretrainLoss::Mse))),
        (Some(GeneratorVariant::Hybrid), SkipChoice::Default, adv(Some(PretrainLoss::Ssim))),
        (Some(GeneratorVariant::Hybrid), SkipChoice::Default, adv(Some(PretrainLoss::Perceptual))),
    ]
}

fn parse_method(
    loss: &str,
    method: &str,
    weights: LossWeights,
) -> Result<TrainMethod, CoreError> {
    let adversarial = match loss {
        "adv" => Some(LossWeights { lambda_m: 0.0, ..weights }),
        "adv+mse" => Some(weights),
        _ => None,
    };
    match adversarial {
        Some(weights) => {
            let pretrain = match method {
                "direct" => None,
                _ => match method.strip_prefix("transfer:") {
                    Some(name) => Some(PretrainLoss::parse(name)?),
                    None => {
                        return Err(CoreError::config(format!(
                            "method must be direct or transfer:<loss>, got {method:?}"
                        )))
                    }
                },
            };
            Ok(TrainMethod::Adversarial { pretrain, weights })
        }
        None => {
            if method != "direct" {
                return Err(CoreError::config(format!(
                    "supervised rows train direct; got method {method:?}"
                )));
            }
            Ok(TrainMethod::Supervised(PretrainLoss::parse(loss)?))
        }
    }
}

fn parse_grid(
    text: &str,
    weights: LossWeights,
) -> Result<Vec<(Option<GeneratorVariant>, SkipChoice, TrainMethod)>, CoreError> {
    let mut rows = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        if words == ["baseline"] {
            rows.push((None, SkipChoice::Default, TrainMethod::Baseline));
            continue;
        }
        if words.len() != 4 {
            return Err(CoreError::config(format!(
                "grid line {}: expected \"variant skips loss method\" or \"baseline\", got {line:?}",
                ln + 1
            )));
        }
        let variant = GeneratorVariant::parse(words[0])?;
        let skips = SkipChoice::parse(words[1])?;
        let method = parse_method(words[2], words[3], weights)?;
        rows.push((Some(variant), skips, method));
    }
    if rows.is_empty() {
        return Err(CoreError::config("grid file has no rows".to_string()));
    }
    Ok(rows)
}

fn print_table(rows: &[AblationRow]) {
    println!(
        "{:<9} {:<22} {:<16} {:<20} {:>8} {:>9} {:>7} {:>7} {:>7}",
        "structure", "skips", "loss", "method", "params", "psnr", "ssim", "rfsim", "vif"
    );
    for row in rows {
        let skips = if row.skips.is_empty() { "-" } else { &row.skips };
        match &row.report {
            Some(r) => println!(
                "{:<9} {:<22} {:<16} {:<20} {:>8} {:>9.4} {:>7.4} {:>7.4} {:>7.4}",
                row.structure, skips, row.loss, row.method, row.parameters, r.psnr, r.ssim,
                r.rfsim, r.vif
            ),
            None => println!(
                "{:<9} {:<22} {:<16} {:<20} {:>8} {:>9} {:>7} {:>7} {:>7}",
                row.structure, skips, row.loss, row.method, row.parameters, "diverged", "-", "-",
                "-"
            ),
        }
    }
}

pub fn run(args: &AblateArgs, ctx: &RunContext) -> Result<Outcome, CoreError> {
    let mut s = Settings::load(args.config.as_deref())?;
    s.set_opt("alpha", &args.alpha);
    s.set_opt("batch", &args.batch);
    s.set_opt("epochs", &args.epochs);
    s.set_opt("patches", &args.patches);
    s.set_opt("steps", &args.steps);
    s.set_opt("d_steps_per_g", &args.d_steps_per_g);
    s.set_opt("lambda_gp", &args.lambda_gp);
    s.set_opt("lambda_m", &args.lambda_m);
    s.set_opt("channels", &args.channels);
    s.set_opt("patch_hw", &args.patch_hw);
    s.set_opt("critic_channels", &args.critic_channels);
    s.set_opt("critic_dense", &args.critic_dense);
    s.set_opt("stride", &args.stride);
    s.set_opt("seed", &args.seed);
    let stride = s.take_or("stride", 1usize)?;
    let t = TrainingSettings::from_settings(&mut s, 1e-4)?;
    s.finish()?;

    let weights = LossWeights { lambda_gp: t.lambda_gp, lambda_m: t.lambda_m };
    let grid = match &args.grid {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            parse_grid(&text, weights)?
        }
        None => default_grid(weights),
    };
    let specs: Vec<AblationSpec> = grid
        .into_iter()
        .map(|(variant, skips, method)| {
            let mut cfg =
                GeneratorConfig::for_variant(variant.unwrap_or(GeneratorVariant::Hybrid));
            if let Some(c) = t.model.channels {
                cfg.channels = c;
            }
            match skips {
                SkipChoice::Default => {}
                SkipChoice::Full => cfg = cfg.with_full_skips(),
                SkipChoice::None => cfg.skip_plan.clear(),
            }
            AblationSpec { config: cfg, method }
        })
        .collect();

    let (pairs, pair_paths) = load_pairs(&args.data)?;
    let (n_train, _) = train_test_split(pairs.len())?;
    let scale = normalization_scale(&pairs[..n_train])?;
    let train: Vec<_> = pairs[..n_train]
        .iter()
        .map(|p| normalize_pair(p, scale))
        .collect::<Result<_, _>>()?;
    let held_out = normalize_pair(&pairs[n_train], scale)?;

    let patch = [DEPTH_WINDOW, t.patch_hw, t.patch_hw];
    let budget = AblationBudget {
        pretrain: PretrainConfig {
            loss: t.loss,
            alpha: t.alpha,
            batch: t.batch,
            steps: t.pretrain_steps(),
            patch,
            seed: t.seed,
        },
        wgan: WganConfig {
            alpha: t.alpha,
            batch: t.batch,
            g_steps: t.wgan_g_steps(),
            d_steps_per_g: t.d_steps_per_g,
            weights,
            patch,
            seed: t.seed,
        },
        critic: t.critic_config(),
        stride_z: stride,
    };
    let rows = run_ablation(&specs, &train, &held_out, &budget)?;

    ensure_dir(&args.out)?;
    let table_path = args.out.join("ablation.json");
    write_json(&table_path, &rows)?;
    print_table(&rows);

    let mut inputs = Vec::new();
    if let Some(cfg_path) = &args.config {
        inputs.push(stamp_input(cfg_path)?);
    }
    if let Some(grid_path) = &args.grid {
        inputs.push(stamp_input(grid_path)?);
    }
    for p in &pair_paths {
        inputs.push(stamp_input(p)?);
    }
    let mut config_map = t.resolved(&specs[0].config);
    config_map.remove("variant");
    config_map.remove("skip_plan");
    config_map.insert("stride".to_string(), stride.to_string());
    config_map.insert("rows".to_string(), rows.len().to_string());
    let manifest = RunManifest {
        command: "ablate".to_string(),
        argv: ctx.argv.clone(),
        config: config_map,
        seed: t.seed,
        deterministic: args.deterministic,
        inputs,
        outputs: vec![stamp(&args.out, &table_path)?],
        duration_s: ctx.elapsed_s(),
        diverged: rows.iter().any(|r| r.diverged),
    };
    manifest.write(&args.out.join("ablate.manifest.json"))?;

    if rows.iter().any(|r| r.diverged) {
        return Ok(Outcome::suspect("one or more ablation runs diverged"));
    }
    Ok(Outcome::ok())
}
