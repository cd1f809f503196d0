use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use voxdn_tensor::Tensor;

use super::volume::Volume;
use crate::CoreError;

#[derive(Clone, Debug, PartialEq)]
pub struct VolumePair {
    pub low: Volume,
    pub normal: Volume,
}

impl VolumePair {
    pub fn new(low: Volume, normal: Volume) -> Result<Self, CoreError> {
        if low.dims() != normal.dims() {
            return Err(CoreError::config(format!(
                "pair members disagree on dims: {:?} vs {:?}",
                low.dims(),
                normal.dims()
            )));
        }
        Ok(VolumePair { low, normal })
    }
}

/// One normalization constant for the whole training set: the maximum voxel
/// over the normal-dose members.
pub fn normalization_scale(pairs: &[VolumePair]) -> Result<f32, CoreError> {
    if pairs.is_empty() {
        return Err(CoreError::config("cannot derive a scale from an empty training set".to_string()));
    }
    let max = pairs.iter().map(|p| p.normal.max_value()).fold(f32::NEG_INFINITY, f32::max);
    if !(max > 0.0) {
        return Err(CoreError::config(format!(
            "normal-dose maximum must be positive to normalize, got {max}"
        )));
    }
    Ok(max)
}

/// Both members divided by the same constant; the constant is kept on the
/// volumes so raw units can be restored later.
pub fn normalize_pair(pair: &VolumePair, scale: f32) -> Result<VolumePair, CoreError> {
    if !(scale > 0.0) {
        return Err(CoreError::config(format!("scale must be positive, got {scale}")));
    }
    let apply = |vol: &Volume| -> Result<Volume, CoreError> {
        let mut out = vol.clone();
        for v in out.data_mut() {
            *v /= scale;
        }
        out.set_intensity_scale(scale)?;
        Ok(out)
    };
    Ok(VolumePair { low: apply(&pair.low)?, normal: apply(&pair.normal)? })
}

pub fn denormalize(vol: &Volume, scale: f32) -> Result<Volume, CoreError> {
    if !(scale > 0.0) {
        return Err(CoreError::config(format!("scale must be positive, got {scale}")));
    }
    let mut out = vol.clone();
    for v in out.data_mut() {
        *v *= scale;
    }
    out.set_intensity_scale(1.0)?;
    Ok(out)
}

/// Coordinate-aligned training example: both patches are [1, d, h, w] slabs
/// cut from the same corner of the paired volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub low: Tensor<f32>,
    pub normal: Tensor<f32>,
    pub corner: [usize; 3],
}

/// Uniformly random in-bounds corners for `size`-shaped slabs.
pub fn sample_coords(
    dims: [usize; 3],
    size: [usize; 3],
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<[usize; 3]>, CoreError> {
    for a in 0..3 {
        if size[a] == 0 || size[a] > dims[a] {
            return Err(CoreError::config(format!(
                "patch size {size:?} does not fit volume dims {dims:?}"
            )));
        }
    }
    Ok((0..count)
        .map(|_| {
            [
                rng.gen_range(0..=dims[0] - size[0]),
                rng.gen_range(0..=dims[1] - size[1]),
                rng.gen_range(0..=dims[2] - size[2]),
            ]
        })
        .collect())
}

pub fn cut_patch(pair: &VolumePair, corner: [usize; 3], size: [usize; 3]) -> Result<PatchPair, CoreError> {
    let shape = vec![1, size[0], size[1], size[2]];
    let low = Tensor::new(shape.clone(), pair.low.slab(corner, size)?)
        .map_err(CoreError::Tensor)?;
    let normal = Tensor::new(shape, pair.normal.slab(corner, size)?)
        .map_err(CoreError::Tensor)?;
    Ok(PatchPair { low, normal, corner })
}

/// Deterministic stream of random coordinate-aligned patch pairs.
pub fn extract_patches<'a>(
    pair: &'a VolumePair,
    count: usize,
    size: [usize; 3],
    seed: u64,
) -> Result<impl Iterator<Item = PatchPair> + 'a, CoreError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // draw all corners up front so the iterator itself cannot fail
    let coords = sample_coords(pair.low.dims(), size, count, &mut rng)?;
    Ok(coords
        .into_iter()
        .map(move |corner| cut_patch(pair, corner, size).expect("coords are in bounds")))
}

/// Spread a total patch budget as evenly as possible over the training pairs
/// (earlier pairs absorb the remainder).
pub fn patches_per_pair(total: usize, pairs: usize) -> Result<Vec<usize>, CoreError> {
    if pairs == 0 {
        return Err(CoreError::config("need at least one pair to extract patches".to_string()));
    }
    let base = total / pairs;
    let extra = total % pairs;
    Ok((0..pairs).map(|i| base + usize::from(i < extra)).collect())
}

/// Train/test split sizes following a 7:2 ratio, with at least one volume on
/// each side.
pub fn train_test_split(n: usize) -> Result<(usize, usize), CoreError> {
    if n < 2 {
        return Err(CoreError::config(format!("need at least 2 pairs to split, got {n}")));
    }
    let train = ((n as f64 * 7.0 / 9.0).round() as usize).clamp(1, n - 1);
    Ok((train, n - train))
}

/// splitmix64-derived stream seed, so every volume/draw gets an independent
/// generator from one master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    fn splitmix64(x: u64) -> u64 {
        let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix64(master ^ splitmix64(stream))
}
