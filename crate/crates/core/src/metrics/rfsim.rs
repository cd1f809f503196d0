use super::{canny_mask, riesz_features};
use crate::CoreError;

const C: f64 = 0.01;

/// Riesz-feature similarity of one slice pair: five feature maps are
/// compared pointwise inside the union of both edge masks, and the five
/// masked means are multiplied. Two edge-free slices count as a perfect
/// match.
pub fn rfsim_slice(test: &[f64], reference: &[f64], h: usize, w: usize) -> Result<f64, CoreError> {
    if test.len() != h * w || reference.len() != h * w {
        return Err(CoreError::config(format!(
            "slice buffers must hold {h}x{w} values",
        )));
    }
    let mask_t = canny_mask(test, h, w)?;
    let mask_r = canny_mask(reference, h, w)?;
    let mask: Vec<bool> = mask_t.iter().zip(&mask_r).map(|(a, b)| a | b).collect();
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Ok(1.0);
    }

    let ft = riesz_features(test, h, w)?;
    let fr = riesz_features(reference, h, w)?;
    let mut score = 1.0;
    for f in 0..5 {
        let mut total = 0.0;
        for i in 0..h * w {
            if mask[i] {
                let (a, b) = (ft[f][i], fr[f][i]);
                total += (2.0 * a * b + C) / (a * a + b * b + C);
            }
        }
        score *= total / count as f64;
    }
    Ok(score)
}
