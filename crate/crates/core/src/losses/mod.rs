//! Training objectives: MSE, slice-wise SSIM and perceptual losses for
//! pretraining, and the Wasserstein pair with gradient penalty for the
//! adversarial phase.

mod adversarial;
mod fidelity;
mod perceptual;

use serde::{Deserialize, Serialize};

use crate::CoreError;

pub use adversarial::{
    discriminator_loss, generator_loss, gradient_penalty, interpolate_samples, interpolate_with,
    Critic, DiscriminatorLoss, GeneratorLoss,
};
pub use fidelity::{mse_loss, ssim_loss};
pub use perceptual::{perceptual_loss, FeatureExtractor, IdentityFeatures, RandomFeatureNet};

/// `lambda_m` may be `f64::INFINITY` (fidelity-only generator objective,
/// skipping the critic entirely) or 0 (pure adversarial).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_gp: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_gp: 10.0, lambda_m: 1e7 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.lambda_gp >= 0.0) || self.lambda_gp.is_infinite() {
            return Err(CoreError::config(format!(
                "lambda_gp must be finite and >= 0, got {}",
                self.lambda_gp
            )));
        }
        if !(self.lambda_m >= 0.0) {
            return Err(CoreError::config(format!("lambda_m must be >= 0, got {}", self.lambda_m)));
        }
        Ok(())
    }
}
