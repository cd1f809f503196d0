//! Re-runs a recorded manifest into a fresh directory and verifies every
//! output hash matches the original run.

use std::path::{Path, PathBuf};

use clap::{Args, Parser};
use voxdn_core::CoreError;

use crate::manifest::{sha256_hex, RunManifest};

use super::{dispatch, Cli, Outcome, RunContext};

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Manifest of the run to reproduce
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fresh directory the re-run writes into
    #[arg(long)]
    pub out: PathBuf,
}

/// Rewrites the recorded `--out` to point into the replay directory.
/// Commands whose `--out` is a file keep their file name under the new
/// directory; directory outputs are replaced wholesale.
fn redirect_out(argv: &[String], command: &str, new_out: &Path) -> Result<Vec<String>, CoreError> {
    let file_semantics = matches!(command, "denoise" | "evaluate");
    let mut argv = argv.to_vec();
    let mut found = false;
    let mut i = 0;
    while i < argv.len() {
        let (is_separate, old): (bool, Option<String>) = if argv[i] == "--out" {
            (true, argv.get(i + 1).cloned())
        } else if let Some(v) = argv[i].strip_prefix("--out=") {
            (false, Some(v.to_string()))
        } else {
            i += 1;
            continue;
        };
        let Some(old) = old else {
            return Err(CoreError::config("recorded argv ends with a bare --out".to_string()));
        };
        let new_value = if file_semantics {
            let name = Path::new(&old)
                .file_name()
                .ok_or_else(|| CoreError::config(format!("recorded --out {old:?} has no file name")))?;
            new_out.join(name)
        } else {
            new_out.to_path_buf()
        };
        let new_value = new_value.to_string_lossy().into_owned();
        if is_separate {
            argv[i + 1] = new_value;
            i += 2;
        } else {
            argv[i] = format!("--out={new_value}");
            i += 1;
        }
        found = true;
    }
    if !found {
        return Err(CoreError::config("recorded argv has no --out to redirect".to_string()));
    }
    Ok(argv)
}

pub fn run(args: &ReplayArgs, ctx: &RunContext) -> Result<Outcome, CoreError> {
    let recorded = RunManifest::read(&args.manifest)?;
    if recorded.command == "replay" {
        return Err(CoreError::config("replay manifests cannot be replayed".to_string()));
    }

    let argv = redirect_out(&recorded.argv, &recorded.command, &args.out)?;
    let cli = Cli::try_parse_from(std::iter::once("voxdn".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| {
            CoreError::config(format!("recorded argv does not parse as a command: {e}"))
        })?;
    let inner_ctx = RunContext::new(argv);
    let inner = dispatch(&cli.command, &inner_ctx)?;

    let mut mismatches = 0usize;
    for stamp in &recorded.outputs {
        let path = args.out.join(&stamp.path);
        let verdict = match sha256_hex(&path) {
            Ok(now) if now == stamp.sha256 => "match",
            Ok(_) => {
                mismatches += 1;
                "MISMATCH"
            }
            Err(_) => {
                mismatches += 1;
                "MISSING"
            }
        };
        println!("{}: {verdict}", stamp.path);
    }
    let _ = ctx;

    if mismatches > 0 {
        return Ok(Outcome::suspect(format!(
            "replay of {} differs in {mismatches} of {} outputs",
            recorded.command,
            recorded.outputs.len()
        )));
    }
    if inner.code != 0 {
        return Ok(inner);
    }
    println!("replay of {} reproduced all {} outputs", recorded.command, recorded.outputs.len());
    Ok(Outcome::ok())
}
