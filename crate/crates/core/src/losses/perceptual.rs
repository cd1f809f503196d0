use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use voxdn_tensor::{xavier_uniform, ConvSpec, Graph, Padding, Tensor, Var};

use crate::CoreError;

/// Slices are shifted/scaled by these before feature extraction, a fixed
/// stand-in for dataset statistics under the [0, 1] intensity convention.
const NORM_MEAN: f32 = 0.5;
const NORM_STD: f32 = 0.25;

/// A fixed (non-trained) differentiable map from single-channel 2D images
/// to feature stacks.
pub trait FeatureExtractor {
    fn name(&self) -> &str;
    /// `slices` is [N, 1, H, W], already normalized.
    fn apply(&self, g: &Graph<f32>, slices: Var) -> Result<Var, CoreError>;
}

/// Passes slices through unchanged; turns the perceptual loss into plain
/// slice-wise MSE.
pub struct IdentityFeatures;

impl FeatureExtractor for IdentityFeatures {
    fn name(&self) -> &str {
        "identity"
    }

    fn apply(&self, _g: &Graph<f32>, slices: Var) -> Result<Var, CoreError> {
        Ok(slices)
    }
}

/// Five seeded random convolutions with ReLU between them. Untrained random
/// projections preserve enough structure to compare feature statistics, and
/// carry no external weight files.
pub struct RandomFeatureNet {
    name: String,
    layers: Vec<(Tensor<f32>, usize)>,
}

const FEATURE_PLAN: [(usize, usize, usize); 5] =
    [(1, 8, 1), (8, 16, 2), (16, 32, 2), (32, 32, 1), (32, 64, 2)];

impl RandomFeatureNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let layers = FEATURE_PLAN
            .iter()
            .map(|&(ic, oc, stride)| {
                let kernel = xavier_uniform(&[oc, ic, 3, 3], ic * 9, oc * 9, &mut rng);
                (kernel, stride)
            })
            .collect();
        RandomFeatureNet { name: format!("randconv5-seed{seed}"), layers }
    }
}

impl Default for RandomFeatureNet {
    fn default() -> Self {
        RandomFeatureNet::new(0x7EA7)
    }
}

impl FeatureExtractor for RandomFeatureNet {
    fn name(&self) -> &str {
        &self.name
    }

    fn apply(&self, g: &Graph<f32>, slices: Var) -> Result<Var, CoreError> {
        let mut h = slices;
        for (kernel, stride) in &self.layers {
            let spec = ConvSpec { stride: *stride, padding: Padding::Zero };
            let w = g.constant(kernel.clone());
            h = g.relu(g.conv(h, w, None, spec)?);
        }
        Ok(h)
    }
}

/// Mean over axial slices of the squared Frobenius distance between the
/// extractor's features of both volumes.
pub fn perceptual_loss(
    g: &Graph<f32>,
    denoised: Var,
    target: Var,
    extractor: &dyn FeatureExtractor,
) -> Result<Var, CoreError> {
    let shape = g.shape_of(denoised);
    if shape != g.shape_of(target) {
        return Err(CoreError::config(format!(
            "perceptual_loss shapes differ: {shape:?} vs {:?}",
            g.shape_of(target)
        )));
    }
    if shape.len() != 5 || shape[1] != 1 {
        return Err(CoreError::config(format!(
            "perceptual_loss needs [B, 1, D, H, W] volumes, got {shape:?}"
        )));
    }
    let slices = shape[0] * shape[2];
    let normalize = |vol: Var| -> Result<Var, CoreError> {
        let stack = g.reshape(vol, vec![slices, 1, shape[3], shape[4]])?;
        Ok(g.scale(g.add_scalar(stack, -NORM_MEAN), 1.0 / NORM_STD))
    };
    let fa = extractor.apply(g, normalize(denoised)?)?;
    let fb = extractor.apply(g, normalize(target)?)?;
    if g.shape_of(fa) != g.shape_of(fb) {
        return Err(CoreError::config(format!(
            "extractor {} returned mismatched feature shapes {:?} vs {:?}",
            extractor.name(),
            g.shape_of(fa),
            g.shape_of(fb)
        )));
    }
    let diff = g.sub(fa, fb)?;
    let per_slice = g.sum_per_sample(g.mul(diff, diff)?)?;
    Ok(g.mean(per_slice))
}
