use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::CoreError;

fn freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

/// Spectral responses of the five features at one frequency: the two
/// first-order Riesz transforms, then the three distinct second-order
/// compositions. The zero frequency maps to zero for all of them.
fn transfer(fy: f64, fx: f64) -> [Complex<f64>; 5] {
    let r2 = fx * fx + fy * fy;
    if r2 == 0.0 {
        return [Complex::new(0.0, 0.0); 5];
    }
    let r = r2.sqrt();
    [
        Complex::new(0.0, -fx / r),
        Complex::new(0.0, -fy / r),
        Complex::new(-fx * fx / r2, 0.0),
        Complex::new(-fx * fy / r2, 0.0),
        Complex::new(-fy * fy / r2, 0.0),
    ]
}

struct Fft2 {
    h: usize,
    w: usize,
    row: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col: std::sync::Arc<dyn rustfft::Fft<f64>>,
    row_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            h,
            w,
            row: planner.plan_fft_forward(w),
            col: planner.plan_fft_forward(h),
            row_inv: planner.plan_fft_inverse(w),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn columns(&self, buf: &mut [Complex<f64>], fft: &std::sync::Arc<dyn rustfft::Fft<f64>>) {
        let mut scratch = vec![Complex::new(0.0, 0.0); self.h];
        for x in 0..self.w {
            for y in 0..self.h {
                scratch[y] = buf[y * self.w + x];
            }
            fft.process(&mut scratch);
            for y in 0..self.h {
                buf[y * self.w + x] = scratch[y];
            }
        }
    }

    fn forward(&self, buf: &mut [Complex<f64>]) {
        for row in buf.chunks_mut(self.w) {
            self.row.process(row);
        }
        self.columns(buf, &self.col);
    }

    fn inverse(&self, buf: &mut [Complex<f64>]) {
        for row in buf.chunks_mut(self.w) {
            self.row_inv.process(row);
        }
        self.columns(buf, &self.col_inv);
        let scale = 1.0 / (self.h * self.w) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// First- and second-order Riesz feature maps of one slice, computed in
/// the frequency domain. Returns five full-resolution real fields.
pub fn riesz_features(slice: &[f64], h: usize, w: usize) -> Result<[Vec<f64>; 5], CoreError> {
    if slice.len() != h * w || h == 0 || w == 0 {
        return Err(CoreError::config(format!(
            "slice buffer must hold {h}x{w} values",
        )));
    }
    let fft = Fft2::new(h, w);
    let mut spectrum: Vec<Complex<f64>> =
        slice.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.forward(&mut spectrum);

    let mut out: [Vec<f64>; 5] = Default::default();
    for (f, slot) in out.iter_mut().enumerate() {
        let mut buf = spectrum.clone();
        for y in 0..h {
            let fy = freq(y, h);
            for x in 0..w {
                buf[y * w + x] *= transfer(fy, freq(x, w))[f];
            }
        }
        fft.inverse(&mut buf);
        *slot = buf.iter().map(|c| c.re).collect();
    }
    Ok(out)
}
