use voxdn_tensor::{ConvSpec, Element, Graph, Padding, Tensor, Var};

use crate::CoreError;

pub(crate) const SSIM_WINDOW: usize = 11;
pub(crate) const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean over the batch of each sample's summed squared error.
pub fn mse_loss<E: Element>(g: &Graph<E>, denoised: Var, target: Var) -> Result<Var, CoreError> {
    let diff = g.sub(denoised, target)?;
    let sq = g.mul(diff, diff)?;
    let per_sample = g.sum_per_sample(sq)?;
    Ok(g.mean(per_sample))
}

pub(crate) fn gaussian_window<E: Element>() -> Tensor<E> {
    let r = (SSIM_WINDOW / 2) as isize;
    let taps: Vec<f64> =
        (-r..=r).map(|i| (-0.5 * (i as f64 / SSIM_SIGMA).powi(2)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    let mut data = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &taps {
        for b in &taps {
            data.push(E::from_f64(a * b / (sum * sum)));
        }
    }
    Tensor::new(vec![1, 1, SSIM_WINDOW, SSIM_WINDOW], data).expect("window shape")
}

/// Collapse [B, 1, D, H, W] into a stack of axial slices [B*D, 1, H, W].
fn to_slices<E: Element>(g: &Graph<E>, vol: Var) -> Result<Var, CoreError> {
    let shape = g.shape_of(vol);
    if shape.len() != 5 || shape[1] != 1 {
        return Err(CoreError::config(format!(
            "slice-wise losses need [B, 1, D, H, W] volumes, got {shape:?}"
        )));
    }
    Ok(g.reshape(vol, vec![shape[0] * shape[2], 1, shape[3], shape[4]])?)
}

/// Per-slice dynamic range of the reference, with flat slices scored
/// against a unit range.
fn slice_ranges<E: Element>(g: &Graph<E>, slices: Var) -> Vec<f64> {
    let t = g.value(slices);
    let n = t.shape()[0];
    let inner = t.numel() / n;
    (0..n)
        .map(|i| {
            let s = &t.data()[i * inner..(i + 1) * inner];
            let lo = s.iter().fold(f64::INFINITY, |m, &v| m.min(v.to_f64()));
            let hi = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64()));
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        })
        .collect()
}

/// Mean over axial slices of (1 - SSIM), Gaussian-windowed, stabilizer
/// constants taken from each target slice's own dynamic range.
pub fn ssim_loss<E: Element>(g: &Graph<E>, denoised: Var, target: Var) -> Result<Var, CoreError> {
    let shape = g.shape_of(denoised);
    if shape != g.shape_of(target) {
        return Err(CoreError::config(format!(
            "ssim_loss shapes differ: {shape:?} vs {:?}",
            g.shape_of(target)
        )));
    }
    if shape.len() != 5 || shape[3] < SSIM_WINDOW || shape[4] < SSIM_WINDOW {
        return Err(CoreError::config(format!(
            "ssim_loss needs [B, 1, D, H, W] with H, W >= the {SSIM_WINDOW}x{SSIM_WINDOW} window, got {shape:?}"
        )));
    }
    let x = to_slices(g, denoised)?;
    let y = to_slices(g, target)?;
    let ranges = slice_ranges(g, y);
    let c1: Vec<E> = ranges.iter().map(|l| E::from_f64((K1 * l) * (K1 * l))).collect();
    let c2: Vec<E> = ranges.iter().map(|l| E::from_f64((K2 * l) * (K2 * l))).collect();

    let w = g.constant(gaussian_window());
    let spec = ConvSpec { stride: 1, padding: Padding::Valid };
    let mu_x = g.conv(x, w, None, spec)?;
    let mu_y = g.conv(y, w, None, spec)?;
    let xx = g.conv(g.mul(x, x)?, w, None, spec)?;
    let yy = g.conv(g.mul(y, y)?, w, None, spec)?;
    let xy = g.conv(g.mul(x, y)?, w, None, spec)?;
    let var_x = g.sub(xx, g.mul(mu_x, mu_x)?)?;
    let var_y = g.sub(yy, g.mul(mu_y, mu_y)?)?;
    let cov = g.sub(xy, g.mul(mu_x, mu_y)?)?;

    let lum_num = g.per_sample_shift(g.scale(g.mul(mu_x, mu_y)?, E::from_f64(2.0)), c1.clone())?;
    let lum_den = g.per_sample_shift(g.add(g.mul(mu_x, mu_x)?, g.mul(mu_y, mu_y)?)?, c1)?;
    let con_num = g.per_sample_shift(g.scale(cov, E::from_f64(2.0)), c2.clone())?;
    let con_den = g.per_sample_shift(g.add(var_x, var_y)?, c2)?;

    let map = g.div(g.mul(lum_num, con_num)?, g.mul(lum_den, con_den)?)?;
    Ok(g.add_scalar(g.scale(g.mean(map), E::from_f64(-1.0)), E::from_f64(1.0)))
}
