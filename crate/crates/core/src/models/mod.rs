//! The denoising generator (hybrid 2D/3D plus pure-2D and pure-3D ablation
//! variants) and the 3D convolutional critic.

mod discriminator;
mod generator;

use rand_chacha::ChaCha20Rng;
use voxdn_tensor::{xavier_uniform, Graph, Tensor, Var};

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig, GeneratorVariant, DEPTH_WINDOW};

use crate::CoreError;

/// One named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor<f32>,
}

fn kernel_param(
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha20Rng,
) -> Param {
    Param { name, value: xavier_uniform(&shape, fan_in, fan_out, rng) }
}

fn bias_param(name: String, len: usize) -> Param {
    Param { name, value: Tensor::zeros(&[len]) }
}

fn bind_params(params: &[Param], g: &Graph<f32>, trainable: bool) -> Vec<Var> {
    params.iter().map(|p| g.var(p.value.clone(), trainable)).collect()
}

fn count(params: &[Param]) -> usize {
    params.iter().map(|p| p.value.numel()).sum()
}

fn replace_values(params: &mut [Param], values: Vec<Tensor<f32>>) -> Result<(), CoreError> {
    if values.len() != params.len() {
        return Err(CoreError::config(format!(
            "expected {} parameter tensors, got {}",
            params.len(),
            values.len()
        )));
    }
    for (p, v) in params.iter_mut().zip(values) {
        if v.shape() != p.value.shape() {
            return Err(CoreError::config(format!(
                "parameter {} has shape {:?}, replacement has {:?}",
                p.name,
                p.value.shape(),
                v.shape()
            )));
        }
        p.value = v;
    }
    Ok(())
}

fn expect_bound(params: &[Param], vars: &[Var]) -> Result<(), CoreError> {
    if vars.len() != params.len() {
        return Err(CoreError::config(format!(
            "model has {} parameters but {} bound vars were passed",
            params.len(),
            vars.len()
        )));
    }
    Ok(())
}
