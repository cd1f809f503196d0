use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CoreError;

pub const PVOL_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PVOL";

/// Dense 3D scalar field in z-major (z, y, x) order. `intensity_scale` is the
/// positive factor mapping stored values back to raw units (1.0 for raw data).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    intensity_scale: f32,
    provenance: String,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self, CoreError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(CoreError::config(format!("volume dims must be positive, got {dims:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(CoreError::config(format!(
                "volume buffer holds {} values but dims {:?} need {}",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Volume { dims, spacing, intensity_scale: 1.0, provenance: String::new(), data })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f32; 3]) -> Self {
        Volume {
            dims,
            spacing,
            intensity_scale: 1.0,
            provenance: String::new(),
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn intensity_scale(&self) -> f32 {
        self.intensity_scale
    }

    pub fn set_intensity_scale(&mut self, scale: f32) -> Result<(), CoreError> {
        if !(scale > 0.0) {
            return Err(CoreError::config(format!("intensity scale must be positive, got {scale}")));
        }
        self.intensity_scale = scale;
        Ok(())
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn set_provenance(&mut self, p: impl Into<String>) {
        self.provenance = p.into();
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Copy of a [size] box starting at `corner`, still z-major.
    pub fn slab(&self, corner: [usize; 3], size: [usize; 3]) -> Result<Vec<f32>, CoreError> {
        for a in 0..3 {
            if corner[a] + size[a] > self.dims[a] {
                return Err(CoreError::config(format!(
                    "slab corner {corner:?} size {size:?} exceeds dims {:?}",
                    self.dims
                )));
            }
        }
        let mut out = Vec::with_capacity(size[0] * size[1] * size[2]);
        for z in corner[0]..corner[0] + size[0] {
            for y in corner[1]..corner[1] + size[1] {
                let start = self.index(z, y, corner[2]);
                out.extend_from_slice(&self.data[start..start + size[2]]);
            }
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing: [f32; 3],
    intensity_scale: f32,
    provenance: String,
}

pub fn to_bytes(vol: &Volume) -> Result<Vec<u8>, CoreError> {
    let header = Header {
        dims: vol.dims,
        spacing: vol.spacing,
        intensity_scale: vol.intensity_scale,
        provenance: vol.provenance.clone(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| CoreError::format(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(16 + header_json.len() + vol.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&PVOL_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for v in &vol.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Volume, CoreError> {
    if bytes.len() < 16 {
        return Err(CoreError::format(format!(
            "volume file too short: {} bytes, header needs 16",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(CoreError::format(format!(
            "bad magic {:?}, expected \"PVOL\"",
            &bytes[0..4]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != PVOL_VERSION {
        return Err(CoreError::format(format!(
            "unsupported volume version {version}, reader supports {PVOL_VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload_at = 16 + header_len;
    if bytes.len() < payload_at {
        return Err(CoreError::format(format!(
            "truncated header: file has {} bytes, header claims {} more after offset 16",
            bytes.len(),
            header_len
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[16..payload_at])
        .map_err(|e| CoreError::format(format!("header decode: {e}")))?;
    let expected = header.dims[0] * header.dims[1] * header.dims[2] * 4;
    let got = bytes.len() - payload_at;
    if got != expected {
        return Err(CoreError::format(format!(
            "payload is {got} bytes but dims {:?} need {expected}",
            header.dims
        )));
    }
    if !(header.intensity_scale > 0.0) {
        return Err(CoreError::format(format!(
            "intensity scale must be positive, got {}",
            header.intensity_scale
        )));
    }
    let data: Vec<f32> = bytes[payload_at..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut vol = Volume::new(header.dims, header.spacing, data)?;
    vol.intensity_scale = header.intensity_scale;
    vol.provenance = header.provenance;
    Ok(vol)
}

pub fn write_volume(vol: &Volume, path: &Path) -> Result<(), CoreError> {
    fs::write(path, to_bytes(vol)?)?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume, CoreError> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes).map_err(|e| match e {
        CoreError::Format(msg) => CoreError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Clinical PET voxel spacing in (z, y, x) millimeters.
pub const CLINICAL_SPACING: [f32; 3] = [1.897, 2.734, 2.734];
