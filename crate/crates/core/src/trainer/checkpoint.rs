use std::path::Path;

use serde::{Deserialize, Serialize};
use voxdn_tensor::Tensor;

use crate::models::Param;
use crate::CoreError;

const MAGIC: &[u8; 4] = b"PTWG";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance stored with every checkpoint. Carries enough architecture
/// detail (channels, skip plan) to rebuild a generator from the file alone;
/// both are empty/zero for critic checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Model identity, e.g. a generator variant name or "critic".
    pub model: String,
    pub channels: usize,
    pub skip_plan: Vec<(usize, usize)>,
    pub phase: String,
    pub loss: String,
    pub epochs: usize,
    pub seed: u64,
    /// Raw-unit scale the training volumes were normalized by.
    pub intensity_scale: f32,
}

/// Binary layout: magic, u32 version, u32 parameter count, then per
/// parameter a u16 name length + name, u8 rank, u32 dims and raw f32
/// little-endian data, and finally a u32-length-prefixed JSON block with
/// the metadata. Everything is fixed-order, so identical params and meta
/// give identical bytes.
pub fn checkpoint_bytes(params: &[Param], meta: &CheckpointMeta) -> Result<Vec<u8>, CoreError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(CoreError::config(format!("parameter name too long: {:?}", p.name)));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value.shape();
        if shape.len() > u8::MAX as usize {
            return Err(CoreError::config(format!("parameter {} rank too high", p.name)));
        }
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(meta)
        .map_err(|e| CoreError::format(format!("metadata encode: {e}")))?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CoreError> {
        let left = self.bytes.len() - self.at;
        if left < n {
            return Err(CoreError::format(format!(
                "checkpoint truncated reading {what}: wanted {n} bytes, {left} left"
            )));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, CoreError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Vec<Param>, CheckpointMeta), CoreError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CoreError::format("not a checkpoint file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::format(format!(
            "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let count = r.u32("parameter count")? as usize;
    let mut params = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u16(&format!("name length of parameter {i}"))? as usize;
        let name = std::str::from_utf8(r.take(name_len, &format!("name of parameter {i}"))?)
            .map_err(|_| CoreError::format(format!("parameter {i} name is not UTF-8")))?
            .to_string();
        let rank = r.take(1, &format!("rank of {name}"))?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("dims of {name}"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, &format!("data of {name}"))?;
        let data: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Param { name, value: Tensor::new(shape, data)? });
    }
    let json_len = r.u32("metadata length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(json_len, "metadata")?)
        .map_err(|e| CoreError::format(format!("metadata decode: {e}")))?;
    if r.at != bytes.len() {
        return Err(CoreError::format(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - r.at
        )));
    }
    Ok((params, meta))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &[Param],
    meta: &CheckpointMeta,
) -> Result<(), CoreError> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(params, meta)?)
        .map_err(|e| CoreError::format(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(Vec<Param>, CheckpointMeta), CoreError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| CoreError::format(format!("{}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes)
        .map_err(|e| CoreError::format(format!("{}: {e}", path.display())))
}

/// Matches loaded parameters against a model's parameter list and returns
/// the values in model order, bit for bit. Order, names and shapes must
/// all agree; the first offender is named.
pub fn restore_values(
    expected: &[Param],
    loaded: &[Param],
) -> Result<Vec<Tensor<f32>>, CoreError> {
    if loaded.len() != expected.len() {
        return Err(CoreError::config(format!(
            "checkpoint holds {} parameters but the model has {}",
            loaded.len(),
            expected.len()
        )));
    }
    for (i, (want, got)) in expected.iter().zip(loaded).enumerate() {
        if want.name != got.name {
            return Err(CoreError::config(format!(
                "parameter {i} is named {:?} but the model expects {:?}",
                got.name, want.name
            )));
        }
        if want.value.shape() != got.value.shape() {
            return Err(CoreError::config(format!(
                "parameter {:?} has shape {:?} but the model expects {:?}",
                got.name,
                got.value.shape(),
                want.value.shape()
            )));
        }
    }
    Ok(loaded.iter().map(|p| p.value.clone()).collect())
}
