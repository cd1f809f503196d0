use super::{filter_valid, gauss_taps, MIN_METRIC_PLANE};
use crate::CoreError;

const SIGMA_NSQ: f64 = 2.0;
const EPS: f64 = 1e-10;

fn decimate(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(oh * ow);
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            out.push(src[y * w + x]);
        }
    }
    (out, oh, ow)
}

/// Pixel-domain visual information fidelity over a four-scale pyramid
/// (window sizes 17, 9, 5, 3). Inputs are expected on a roughly 8-bit
/// scale; the caller maps volumes to [0, 255] by the reference range.
pub fn vif_slice(test: &[f64], reference: &[f64], h: usize, w: usize) -> Result<f64, CoreError> {
    if test.len() != h * w || reference.len() != h * w {
        return Err(CoreError::config(format!(
            "slice buffers must hold {h}x{w} values",
        )));
    }
    if h < MIN_METRIC_PLANE || w < MIN_METRIC_PLANE {
        return Err(CoreError::config(format!(
            "slice is {h}x{w} but the VIF pyramid needs at least \
             {MIN_METRIC_PLANE}x{MIN_METRIC_PLANE}",
        )));
    }

    let (mut rt, mut tt) = (reference.to_vec(), test.to_vec());
    let (mut ch, mut cw) = (h, w);
    let mut num = 0.0;
    let mut den = 0.0;
    for scale in 1..=4u32 {
        let n = (1usize << (5 - scale)) + 1;
        let taps = gauss_taps(n, n as f64 / 5.0);
        if scale > 1 {
            let (rf, fh, fw) = filter_valid(&rt, ch, cw, &taps);
            let (tf, _, _) = filter_valid(&tt, ch, cw, &taps);
            let (r2, dh, dw) = decimate(&rf, fh, fw);
            let (t2, _, _) = decimate(&tf, fh, fw);
            rt = r2;
            tt = t2;
            ch = dh;
            cw = dw;
        }

        let rr: Vec<f64> = rt.iter().map(|v| v * v).collect();
        let tsq: Vec<f64> = tt.iter().map(|v| v * v).collect();
        let rxt: Vec<f64> = rt.iter().zip(&tt).map(|(a, b)| a * b).collect();
        let (mu1, oh, ow) = filter_valid(&rt, ch, cw, &taps);
        let (mu2, _, _) = filter_valid(&tt, ch, cw, &taps);
        let (m11, _, _) = filter_valid(&rr, ch, cw, &taps);
        let (m22, _, _) = filter_valid(&tsq, ch, cw, &taps);
        let (m12, _, _) = filter_valid(&rxt, ch, cw, &taps);

        for i in 0..oh * ow {
            let mut s1 = (m11[i] - mu1[i] * mu1[i]).max(0.0);
            let s2 = (m22[i] - mu2[i] * mu2[i]).max(0.0);
            let s12 = m12[i] - mu1[i] * mu2[i];

            let mut g = s12 / (s1 + EPS);
            let mut sv = s2 - g * s12;
            if s1 < EPS {
                g = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if s2 < EPS {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s2;
                g = 0.0;
            }
            if sv < EPS {
                sv = EPS;
            }
            num += (1.0 + g * g * s1 / (sv + SIGMA_NSQ)).log10();
            den += (1.0 + s1 / SIGMA_NSQ).log10();
        }
    }
    if den > 0.0 && den.is_finite() {
        Ok(num / den)
    } else {
        // an information-free reference carries nothing to lose
        Ok(1.0)
    }
}
