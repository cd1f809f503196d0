//! Run manifests: every command records what it read, what it wrote and
//! the hash of each artifact, so a run can later be replayed and checked
//! bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voxdn_core::CoreError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileStamp {
    /// Output paths are relative to the run's output directory; input
    /// paths are recorded as given on the command line.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Process arguments after the binary name, exactly as invoked.
    pub argv: Vec<String>,
    /// Fully resolved settings after merging defaults, file and flags.
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub deterministic: bool,
    pub inputs: Vec<FileStamp>,
    pub outputs: Vec<FileStamp>,
    pub duration_s: f64,
    pub diverged: bool,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CoreError> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| CoreError::format(format!("{}: {e}", path.display())))?;
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| CoreError::format(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CoreError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CoreError::format(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CoreError::format(format!("{}: not a run manifest: {e}", path.display())))
    }
}

pub fn sha256_hex(path: &Path) -> Result<String, CoreError> {
    let bytes =
        fs::read(path).map_err(|e| CoreError::format(format!("{}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").unwrap();
    }
    Ok(hex)
}

/// Stamp recorded under the path's position relative to `root`; artifacts
/// outside the output directory keep their full path.
pub fn stamp(root: &Path, path: &Path) -> Result<FileStamp, CoreError> {
    let rel = path.strip_prefix(root).unwrap_or(path);
    Ok(FileStamp { path: rel.to_string_lossy().into_owned(), sha256: sha256_hex(path)? })
}

/// Input stamp: the path is recorded as given.
pub fn stamp_input(path: &Path) -> Result<FileStamp, CoreError> {
    Ok(FileStamp { path: path.to_string_lossy().into_owned(), sha256: sha256_hex(path)? })
}
