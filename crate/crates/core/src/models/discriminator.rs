use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use voxdn_tensor::{ConvGeom, ConvSpec, Graph, Padding, Var};

use super::{bias_param, bind_params, count, expect_bound, kernel_param, replace_values, Param};
use crate::CoreError;

const KERNEL: usize = 3;
const STRIDE: usize = 2;

/// Wasserstein critic: four stride-2 3D convolutions, then two dense layers.
/// The dense stage is sized for `input_shape` at build time, so the critic
/// only accepts that window geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub channels: [usize; 4],
    pub dense_width: usize,
    pub leaky_slope: f32,
    pub input_shape: [usize; 3],
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            channels: [64, 128, 256, 512],
            dense_width: 1024,
            leaky_slope: 0.2,
            input_shape: [9, 64, 64],
        }
    }
}

impl DiscriminatorConfig {
    pub fn for_input(input_shape: [usize; 3]) -> Self {
        DiscriminatorConfig { input_shape, ..Default::default() }
    }

    /// Spatial dims after each stride-2 stage (ceil division from the
    /// zero-padded convolutions), index 0 being the input.
    pub fn spatial_trace(&self) -> Result<Vec<[usize; 3]>, CoreError> {
        let spec = ConvSpec { stride: STRIDE, padding: Padding::Zero };
        let mut dims = self.input_shape;
        let mut trace = vec![dims];
        for stage in 0..4 {
            let geom = ConvGeom::for_conv(&dims, 1, 1, KERNEL, spec).map_err(|e| {
                CoreError::config(format!("stage {} cannot reduce {dims:?}: {e}", stage + 1))
            })?;
            dims = [geom.spatial_out[0], geom.spatial_out[1], geom.spatial_out[2]];
            trace.push(dims);
        }
        Ok(trace)
    }

    fn flatten_len(&self) -> Result<usize, CoreError> {
        let last = *self.spatial_trace()?.last().unwrap();
        Ok(self.channels[3] * last[0] * last[1] * last[2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: Vec<Param>,
}

impl Discriminator {
    pub fn build(config: DiscriminatorConfig, seed: u64) -> Result<Self, CoreError> {
        if config.channels.iter().any(|&c| c == 0) || config.dense_width == 0 {
            return Err(CoreError::config("critic layer widths must be positive".to_string()));
        }
        let flat = config.flatten_len()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(12);
        let taps = KERNEL * KERNEL * KERNEL;
        let mut in_ch = 1;
        for (i, &out_ch) in config.channels.iter().enumerate() {
            params.push(kernel_param(
                format!("c{}.kernel", i + 1),
                vec![out_ch, in_ch, KERNEL, KERNEL, KERNEL],
                in_ch * taps,
                out_ch * taps,
                &mut rng,
            ));
            params.push(bias_param(format!("c{}.bias", i + 1), out_ch));
            in_ch = out_ch;
        }
        params.push(kernel_param(
            "d1.weight".to_string(),
            vec![config.dense_width, flat],
            flat,
            config.dense_width,
            &mut rng,
        ));
        params.push(bias_param("d1.bias".to_string(), config.dense_width));
        params.push(kernel_param(
            "d2.weight".to_string(),
            vec![1, config.dense_width],
            config.dense_width,
            1,
            &mut rng,
        ));
        params.push(bias_param("d2.bias".to_string(), 1));
        Ok(Discriminator { config, params })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn count_parameters(&self) -> usize {
        count(&self.params)
    }

    pub fn bind(&self, g: &Graph<f32>, trainable: bool) -> Vec<Var> {
        bind_params(&self.params, g, trainable)
    }

    pub fn set_values(&mut self, values: Vec<voxdn_tensor::Tensor<f32>>) -> Result<(), CoreError> {
        replace_values(&mut self.params, values)
    }

    /// Score one batch of [B, 1, D, H, W] windows; returns [B, 1], unbounded.
    pub fn forward(&self, g: &Graph<f32>, vars: &[Var], x: Var) -> Result<Var, CoreError> {
        expect_bound(&self.params, vars)?;
        let shape = g.shape_of(x);
        if shape.len() != 5 || shape[1] != 1 {
            return Err(CoreError::config(format!(
                "critic input must be [B, 1, D, H, W], got {shape:?}"
            )));
        }
        let spec = ConvSpec { stride: STRIDE, padding: Padding::Zero };
        let slope = self.config.leaky_slope;
        let mut h = x;
        for stage in 0..4 {
            let conv = g.conv(h, vars[2 * stage], Some(vars[2 * stage + 1]), spec)?;
            h = g.leaky_relu(conv, slope);
        }
        let hshape = g.shape_of(h);
        let flat: usize = hshape[1..].iter().product();
        let expected = self.config.flatten_len()?;
        if flat != expected {
            return Err(CoreError::config(format!(
                "critic was built for {:?} windows (flatten {expected}), input {:?} flattens to {flat}",
                self.config.input_shape,
                &shape[2..]
            )));
        }
        let flattened = g.reshape(h, vec![hshape[0], flat])?;
        let d1 = g.dense(flattened, vars[8], vars[9])?;
        let a1 = g.leaky_relu(d1, slope);
        Ok(g.dense(a1, vars[10], vars[11])?)
    }
}
