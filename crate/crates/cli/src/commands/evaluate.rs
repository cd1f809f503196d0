//! Full-reference scoring of a volume against its reference.

use std::path::PathBuf;

use clap::Args;
use voxdn_core::data::read_volume;
use voxdn_core::metrics::evaluate_volume;
use voxdn_core::CoreError;

use crate::manifest::{stamp, stamp_input, RunManifest};

use super::{ensure_dir, write_json, Outcome, RunContext};

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Volume under test
    #[arg(long)]
    pub test: PathBuf,
    /// Ground-truth reference volume
    #[arg(long)]
    pub reference: PathBuf,
    /// Output report file (JSON)
    #[arg(long)]
    pub out: PathBuf,
    /// Record the determinism pin in the manifest
    #[arg(long)]
    pub deterministic: bool,
}

pub fn run(args: &EvaluateArgs, ctx: &RunContext) -> Result<Outcome, CoreError> {
    let test = read_volume(&args.test)?;
    let reference = read_volume(&args.reference)?;
    let report = evaluate_volume(&test, &reference)?;

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    write_json(&args.out, &report)?;

    let out_root = args.out.parent().unwrap_or(std::path::Path::new("")).to_path_buf();
    let manifest = RunManifest {
        command: "evaluate".to_string(),
        argv: ctx.argv.clone(),
        config: std::collections::BTreeMap::new(),
        seed: 0,
        deterministic: args.deterministic,
        inputs: vec![stamp_input(&args.test)?, stamp_input(&args.reference)?],
        outputs: vec![stamp(&out_root, &args.out)?],
        duration_s: ctx.elapsed_s(),
        diverged: false,
    };
    manifest.write(&args.out.with_extension("manifest.json"))?;

    println!(
        "psnr {:.4} dB  nrmse {:.3}%  ssim {:.4}  rfsim {:.4}  vif {:.4}",
        report.psnr, report.nrmse_percent, report.ssim, report.rfsim, report.vif
    );
    Ok(Outcome::ok())
}
