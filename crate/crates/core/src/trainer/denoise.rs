use voxdn_tensor::{Graph, Tensor};

use crate::data::Volume;
use crate::models::{Generator, DEPTH_WINDOW};
use crate::CoreError;

/// Runs the generator over a whole volume as a sliding stack of 9-slice
/// windows starting at 0, stride, 2*stride, ... plus a final window
/// flushed against the bottom. Overlapping slices are averaged with
/// uniform weights. A volume exactly one window deep reproduces the
/// plain forward pass bit for bit.
pub fn denoise_volume(
    gen: &Generator,
    vol: &Volume,
    stride_z: usize,
) -> Result<Volume, CoreError> {
    let [d, h, w] = vol.dims();
    if d < DEPTH_WINDOW {
        return Err(CoreError::config(format!(
            "volume depth {d} is below the {DEPTH_WINDOW}-slice window"
        )));
    }
    if stride_z == 0 || stride_z > DEPTH_WINDOW {
        return Err(CoreError::config(format!(
            "stride must be between 1 and {DEPTH_WINDOW} so every slice is covered, got {stride_z}"
        )));
    }

    let mut starts: Vec<usize> = (0..=d - DEPTH_WINDOW).step_by(stride_z).collect();
    if *starts.last().unwrap() != d - DEPTH_WINDOW {
        starts.push(d - DEPTH_WINDOW);
    }

    let mut acc = vec![0.0f64; d * h * w];
    let mut hits = vec![0u32; d * h * w];
    for &s in &starts {
        let slab = vol.slab([s, 0, 0], [DEPTH_WINDOW, h, w])?;
        let g: Graph<f32> = Graph::new();
        let vars = gen.bind(&g, false);
        let x = g.constant(Tensor::new(vec![1, 1, DEPTH_WINDOW, h, w], slab)?);
        let out = gen.forward(&g, &vars, x)?;
        let out = g.value(out);
        let base = s * h * w;
        for (i, &v) in out.data().iter().enumerate() {
            acc[base + i] += v as f64;
            hits[base + i] += 1;
        }
    }

    let data: Vec<f32> =
        acc.iter().zip(&hits).map(|(&a, &n)| (a / n as f64) as f32).collect();
    let mut out = Volume::new([d, h, w], vol.spacing(), data)?;
    if vol.intensity_scale() != 1.0 {
        out.set_intensity_scale(vol.intensity_scale())?;
    }
    out.set_provenance(format!("{} | denoised", vol.provenance()));
    Ok(out)
}
