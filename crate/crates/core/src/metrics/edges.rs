use std::collections::VecDeque;

use super::gauss_taps;
use crate::CoreError;

const BLUR_SIGMA: f64 = 1.4;
const BLUR_RADIUS: usize = 5;
const STRONG_FRACTION: f64 = 0.2;
const WEAK_FRACTION: f64 = 0.1;

fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Edge mask for one slice: Gaussian smoothing, Sobel gradients, then
/// two-level hysteresis with thresholds relative to the gradient peak.
/// Borders replicate. A flat slice yields an empty mask.
pub fn canny_mask(slice: &[f64], h: usize, w: usize) -> Result<Vec<bool>, CoreError> {
    if slice.len() != h * w || h == 0 || w == 0 {
        return Err(CoreError::config(format!(
            "slice buffer must hold {h}x{w} values",
        )));
    }

    let taps = gauss_taps(2 * BLUR_RADIUS + 1, BLUR_SIGMA);
    let r = BLUR_RADIUS as isize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * slice[y * w + clamp(x as isize + i as isize - r, w)];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut smooth = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * rows[clamp(y as isize + i as isize - r, h) * w + x];
            }
            smooth[y * w + x] = acc;
        }
    }

    let at = |y: isize, x: isize| smooth[clamp(y, h) * w + clamp(x, w)];
    let mut mag = vec![0.0; h * w];
    let mut peak = 0.0f64;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let m = (gx * gx + gy * gy).sqrt();
            mag[y as usize * w + x as usize] = m;
            peak = peak.max(m);
        }
    }
    if peak <= 0.0 {
        return Ok(vec![false; h * w]);
    }

    let strong = STRONG_FRACTION * peak;
    let weak = WEAK_FRACTION * peak;
    let mut mask = vec![false; h * w];
    let mut queue = VecDeque::new();
    for (i, &m) in mag.iter().enumerate() {
        if m >= strong {
            mask[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !mask[j] && mag[j] >= weak {
                    mask[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(mask)
}
