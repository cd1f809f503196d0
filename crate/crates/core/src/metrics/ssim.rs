use super::{filter_valid, gauss_taps};
use crate::CoreError;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean structural similarity over all valid 11x11 windows of one slice.
/// The stabilizing constants come from the reference slice's dynamic
/// range; a flat reference slice falls back to a unit range.
pub fn ssim_slice(test: &[f64], reference: &[f64], h: usize, w: usize) -> Result<f64, CoreError> {
    if test.len() != h * w || reference.len() != h * w {
        return Err(CoreError::config(format!(
            "slice buffers must hold {h}x{w} values",
        )));
    }
    if h < WINDOW || w < WINDOW {
        return Err(CoreError::config(format!(
            "slice is {h}x{w} but SSIM needs at least {WINDOW}x{WINDOW}",
        )));
    }

    let lo = reference.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (K1 * range) * (K1 * range);
    let c2 = (K2 * range) * (K2 * range);

    let taps = gauss_taps(WINDOW, SIGMA);
    let tt: Vec<f64> = test.iter().map(|v| v * v).collect();
    let rr: Vec<f64> = reference.iter().map(|v| v * v).collect();
    let tr: Vec<f64> = test.iter().zip(reference).map(|(a, b)| a * b).collect();

    let (mt, oh, ow) = filter_valid(test, h, w, &taps);
    let (mr, _, _) = filter_valid(reference, h, w, &taps);
    let (mtt, _, _) = filter_valid(&tt, h, w, &taps);
    let (mrr, _, _) = filter_valid(&rr, h, w, &taps);
    let (mtr, _, _) = filter_valid(&tr, h, w, &taps);

    let mut total = 0.0;
    for i in 0..oh * ow {
        let vt = (mtt[i] - mt[i] * mt[i]).max(0.0);
        let vr = (mrr[i] - mr[i] * mr[i]).max(0.0);
        let cov = mtr[i] - mt[i] * mr[i];
        total += ((2.0 * mt[i] * mr[i] + c1) * (2.0 * cov + c2))
            / ((mt[i] * mt[i] + mr[i] * mr[i] + c1) * (vt + vr + c2));
    }
    Ok(total / (oh * ow) as f64)
}
