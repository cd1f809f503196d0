//! Volumetric denoising pipeline: synthetic paired-dose phantoms, the hybrid
//! 2D/3D generator and its 3D critic, training objectives (MSE / SSIM /
//! perceptual / Wasserstein with gradient penalty), the 4:1 adversarial
//! training loop with transfer initialization, and the evaluation metrics
//! (PSNR, NRMSE, SSIM, RFSIM, VIF).
//!
//! Everything is deterministic given a seed: data generation, initialization,
//! batch order, and training itself (single-threaded math with fixed reduction
//! order).

mod error;

pub mod data;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod trainer;

pub use error::CoreError;
