//! Paired low/normal-dose phantom synthesis.

use std::path::PathBuf;

use clap::Args;
use voxdn_core::data::{
    derive_seed, generate_phantom, simulate_acquisition, write_volume, Ellipsoid, LesionSpec,
    Organ, PhantomSpec,
};
use voxdn_core::CoreError;

use crate::config::{parse_dims, Settings};
use crate::manifest::{stamp, RunManifest};

use super::{ensure_dir, pair_file_names, Outcome, RunContext};

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output directory for the volume pairs
    #[arg(long)]
    pub out: PathBuf,
    /// key = value settings file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of low/normal pairs to synthesize
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Volume shape as ZxYxX
    #[arg(long)]
    pub dims: Option<String>,
    /// Low-dose fraction in (0, 1]
    #[arg(long)]
    pub dose: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Preset for clinical-scale volume dimensions
    #[arg(long)]
    pub full_scale: bool,
    /// Record the determinism pin in the manifest
    #[arg(long)]
    pub deterministic: bool,
}

// phantom sub-streams; acquisition draws must never reuse activity draws
const STREAM_ACTIVITY: u64 = 0x0100;
const STREAM_NORMAL_DOSE: u64 = 0x0200;
const STREAM_LOW_DOSE: u64 = 0x0300;

/// Desk-size anatomy stretched onto the requested grid. Geometry scales
/// per axis; the PSF width and detector sensitivity are acquisition
/// properties and stay fixed.
fn scaled_spec(dims: [usize; 3]) -> PhantomSpec {
    let base = PhantomSpec::desk();
    if dims == base.dims {
        return base;
    }
    let f: Vec<f64> = (0..3).map(|a| dims[a] as f64 / base.dims[a] as f64).collect();
    let favg = (f[0] + f[1] + f[2]) / 3.0;
    let scale_ellipsoid = |e: &Ellipsoid| Ellipsoid {
        center: [e.center[0] * f[0], e.center[1] * f[1], e.center[2] * f[2]],
        radii: [e.radii[0] * f[0], e.radii[1] * f[1], e.radii[2] * f[2]],
    };
    PhantomSpec {
        dims,
        spacing: base.spacing,
        base_uptake: base.base_uptake,
        body: scale_ellipsoid(&base.body),
        organs: base
            .organs
            .iter()
            .map(|o| Organ { shape: scale_ellipsoid(&o.shape), uptake: o.uptake })
            .collect(),
        lesions: base.lesions.map(|l| LesionSpec {
            count: l.count,
            radius_range: [l.radius_range[0] * favg, l.radius_range[1] * favg],
            uptake_mult: l.uptake_mult,
        }),
        texture: base.texture,
        psf_sigma: base.psf_sigma,
        sensitivity: base.sensitivity,
    }
}

pub fn run(args: &GenDataArgs, ctx: &RunContext) -> Result<Outcome, CoreError> {
    let mut s = Settings::load(args.config.as_deref())?;
    s.set_opt("pairs", &args.pairs);
    s.set_opt("dims", &args.dims);
    s.set_opt("dose", &args.dose);
    s.set_opt("seed", &args.seed);
    if args.full_scale {
        s.set_default("dims", "87x256x256");
    }
    let pairs = s.take_or("pairs", 9usize)?;
    let dims_str = s.take_or("dims", "32x96x96".to_string())?;
    let dose = s.take_or("dose", 0.25f64)?;
    let seed = s.take_or("seed", 0u64)?;
    s.finish()?;
    if pairs == 0 {
        return Err(CoreError::config("pairs must be at least 1".to_string()));
    }
    let dims = parse_dims(&dims_str)?;

    let spec = scaled_spec(dims);
    let acq = spec.acq_params();
    ensure_dir(&args.out)?;

    let mut outputs = Vec::new();
    for i in 0..pairs {
        let activity = generate_phantom(&spec, derive_seed(seed, STREAM_ACTIVITY + i as u64))?;
        let normal = simulate_acquisition(
            &activity,
            1.0,
            &acq,
            derive_seed(seed, STREAM_NORMAL_DOSE + i as u64),
        )?;
        let low = simulate_acquisition(
            &activity,
            dose,
            &acq,
            derive_seed(seed, STREAM_LOW_DOSE + i as u64),
        )?;
        let (low_name, normal_name) = pair_file_names(i);
        let low_path = args.out.join(low_name);
        let normal_path = args.out.join(normal_name);
        write_volume(&low, &low_path)?;
        write_volume(&normal, &normal_path)?;
        outputs.push(stamp(&args.out, &low_path)?);
        outputs.push(stamp(&args.out, &normal_path)?);
    }

    let mut config = std::collections::BTreeMap::new();
    config.insert("pairs".to_string(), pairs.to_string());
    config.insert("dims".to_string(), format!("{}x{}x{}", dims[0], dims[1], dims[2]));
    config.insert("dose".to_string(), dose.to_string());
    config.insert("seed".to_string(), seed.to_string());
    let manifest = RunManifest {
        command: "gen-data".to_string(),
        argv: ctx.argv.clone(),
        config,
        seed,
        deterministic: args.deterministic,
        inputs: Vec::new(),
        outputs,
        duration_s: ctx.elapsed_s(),
        diverged: false,
    };
    manifest.write(&args.out.join("gen-data.manifest.json"))?;

    println!("wrote {pairs} volume pairs ({dims_str}) to {}", args.out.display());
    Ok(Outcome::ok())
}
