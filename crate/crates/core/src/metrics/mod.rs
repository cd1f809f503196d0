//! Volume quality metrics.
//!
//! Everything here works in f64 regardless of the stored voxel type, and
//! every score is deterministic: two calls on the same pair of volumes
//! produce bit-identical reports.

mod edges;
mod rfsim;
mod riesz;
mod ssim;
mod vif;

pub use edges::canny_mask;
pub use rfsim::rfsim_slice;
pub use riesz::riesz_features;
pub use ssim::ssim_slice;
pub use vif::vif_slice;

use serde::{Deserialize, Serialize};

use crate::data::Volume;
use crate::CoreError;

/// Smallest slice side `evaluate_volume` accepts. The coarsest VIF scale
/// still needs a 3x3 window after three filter-and-halve rounds, which
/// works out to 41 input pixels per axis.
pub const MIN_METRIC_PLANE: usize = 41;

pub(crate) fn gauss_taps(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len - 1) as f64 / 2.0;
    let mut taps: Vec<f64> =
        (0..len).map(|i| (-0.5 * ((i as f64 - c) / sigma).powi(2)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable valid-region filter; returns the field and its dimensions.
pub(crate) fn filter_valid(
    src: &[f64],
    h: usize,
    w: usize,
    taps: &[f64],
) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * src[y * w + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, oh, ow)
}

fn check_lengths(test: &[f32], reference: &[f32]) -> Result<(), CoreError> {
    if test.is_empty() {
        return Err(CoreError::config("cannot score an empty volume"));
    }
    if test.len() != reference.len() {
        return Err(CoreError::config(format!(
            "test has {} voxels but the reference has {}",
            test.len(),
            reference.len()
        )));
    }
    Ok(())
}

fn mean_squared_error(test: &[f32], reference: &[f32]) -> f64 {
    let sum: f64 = test
        .iter()
        .zip(reference)
        .map(|(&t, &r)| {
            let d = t as f64 - r as f64;
            d * d
        })
        .sum();
    sum / test.len() as f64
}

/// Peak signal-to-noise ratio in dB, with the reference maximum as the
/// peak. Identical inputs score positive infinity.
pub fn psnr(test: &[f32], reference: &[f32]) -> Result<f64, CoreError> {
    check_lengths(test, reference)?;
    let peak = reference.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    if !(peak > 0.0) {
        return Err(CoreError::config(
            "reference peak must be positive to define PSNR",
        ));
    }
    let mse = mean_squared_error(test, reference);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Root-mean-square error normalized by the reference dynamic range,
/// in percent.
pub fn nrmse_percent(test: &[f32], reference: &[f32]) -> Result<f64, CoreError> {
    check_lengths(test, reference)?;
    let lo = reference.iter().fold(f64::INFINITY, |m, &v| m.min(v as f64));
    let hi = reference.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    if !(hi > lo) {
        return Err(CoreError::config(
            "reference has zero dynamic range; NRMSE is undefined",
        ));
    }
    Ok(100.0 * mean_squared_error(test, reference).sqrt() / (hi - lo))
}

fn slice_f64(vol: &Volume, z: usize) -> Vec<f64> {
    let [_, h, w] = vol.dims();
    vol.data()[z * h * w..(z + 1) * h * w].iter().map(|&v| v as f64).collect()
}

fn check_pair(test: &Volume, reference: &Volume) -> Result<(), CoreError> {
    if test.dims() != reference.dims() {
        return Err(CoreError::config(format!(
            "test dims {:?} do not match reference dims {:?}",
            test.dims(),
            reference.dims()
        )));
    }
    Ok(())
}

/// Mean SSIM over all axial slices.
pub fn ssim_volume(test: &Volume, reference: &Volume) -> Result<f64, CoreError> {
    check_pair(test, reference)?;
    let [d, h, w] = test.dims();
    let mut total = 0.0;
    for z in 0..d {
        total += ssim_slice(&slice_f64(test, z), &slice_f64(reference, z), h, w)?;
    }
    Ok(total / d as f64)
}

/// Mean Riesz-feature similarity over all axial slices.
pub fn rfsim_volume(test: &Volume, reference: &Volume) -> Result<f64, CoreError> {
    check_pair(test, reference)?;
    let [d, h, w] = test.dims();
    let mut total = 0.0;
    for z in 0..d {
        total += rfsim_slice(&slice_f64(test, z), &slice_f64(reference, z), h, w)?;
    }
    Ok(total / d as f64)
}

/// Maps both volumes to the reference's [0, 255] range, as the VIF noise
/// floor assumes 8-bit-like intensities.
fn vif_mapped(test: &Volume, reference: &Volume) -> Result<(Vec<f64>, Vec<f64>), CoreError> {
    let lo = reference.min_value() as f64;
    let hi = reference.max_value() as f64;
    if !(hi > lo) {
        return Err(CoreError::config(
            "reference has zero dynamic range; VIF is undefined",
        ));
    }
    let a = 255.0 / (hi - lo);
    let map = |vol: &Volume| vol.data().iter().map(|&v| (v as f64 - lo) * a).collect();
    Ok((map(test), map(reference)))
}

/// Mean four-scale visual information fidelity over all axial slices.
pub fn vif_volume(test: &Volume, reference: &Volume) -> Result<f64, CoreError> {
    check_pair(test, reference)?;
    let [d, h, w] = test.dims();
    let (tm, rm) = vif_mapped(test, reference)?;
    let mut total = 0.0;
    for z in 0..d {
        total += vif_slice(&tm[z * h * w..(z + 1) * h * w], &rm[z * h * w..(z + 1) * h * w], h, w)?;
    }
    Ok(total / d as f64)
}

/// Per-slice scores kept alongside the volume means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceScores {
    pub ssim: f64,
    pub rfsim: f64,
    pub vif: f64,
}

/// Full quality report for one test volume against its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Infinite for a perfect match; serialized as the string "inf".
    #[serde(with = "json_float")]
    pub psnr: f64,
    pub nrmse_percent: f64,
    pub ssim: f64,
    pub rfsim: f64,
    pub vif: f64,
    pub per_slice: Vec<SliceScores>,
    /// Hash of both volumes' dims and raw voxels, tying the report to its
    /// exact inputs.
    pub fingerprint: String,
}

/// Scores a test volume against a reference of the same shape.
pub fn evaluate_volume(test: &Volume, reference: &Volume) -> Result<MetricReport, CoreError> {
    check_pair(test, reference)?;
    let [d, h, w] = test.dims();
    if h < MIN_METRIC_PLANE || w < MIN_METRIC_PLANE {
        return Err(CoreError::config(format!(
            "slices are {h}x{w} but the VIF pyramid needs at least \
             {MIN_METRIC_PLANE}x{MIN_METRIC_PLANE}"
        )));
    }
    let psnr = psnr(test.data(), reference.data())?;
    let nrmse_percent = nrmse_percent(test.data(), reference.data())?;
    let (tm, rm) = vif_mapped(test, reference)?;

    let mut per_slice = Vec::with_capacity(d);
    for z in 0..d {
        let ts = slice_f64(test, z);
        let rs = slice_f64(reference, z);
        per_slice.push(SliceScores {
            ssim: ssim_slice(&ts, &rs, h, w)?,
            rfsim: rfsim_slice(&ts, &rs, h, w)?,
            vif: vif_slice(&tm[z * h * w..(z + 1) * h * w], &rm[z * h * w..(z + 1) * h * w], h, w)?,
        });
    }
    let n = d as f64;
    Ok(MetricReport {
        psnr,
        nrmse_percent,
        ssim: per_slice.iter().map(|s| s.ssim).sum::<f64>() / n,
        rfsim: per_slice.iter().map(|s| s.rfsim).sum::<f64>() / n,
        vif: per_slice.iter().map(|s| s.vif).sum::<f64>() / n,
        per_slice,
        fingerprint: fingerprint(test, reference),
    })
}

fn fingerprint(test: &Volume, reference: &Volume) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut write = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    };
    for vol in [test, reference] {
        for dim in vol.dims() {
            write(&(dim as u64).to_le_bytes());
        }
        for v in vol.data() {
            write(&v.to_le_bytes());
        }
    }
    format!("{h:016x}")
}

/// Serializes a float that may legitimately be infinite (JSON has no
/// literal for it) as the string "inf" / "-inf".
mod json_float {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct FloatOrInf;

    impl Visitor<'_> for FloatOrInf {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or the string \"inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("unexpected float string {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(FloatOrInf)
    }
}
