//! Training loops: supervised pretraining and adversarial refinement.
//!
//! Every run is fully determined by its seed. Batches are drawn
//! synchronously from a counter-based stream, each optimizer step sees a
//! fresh draw, and a non-finite loss or parameter rolls the model back to
//! the last healthy snapshot instead of writing garbage.

mod ablate;
mod checkpoint;
mod denoise;

pub use ablate::{run_ablation, AblationBudget, AblationRow, AblationSpec, TrainMethod};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, restore_values, save_checkpoint,
    CheckpointMeta, CHECKPOINT_VERSION,
};
pub use denoise::denoise_volume;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use voxdn_tensor::{AdamConfig, AdamState, Graph, Tensor, Var};

use crate::data::{derive_seed, VolumePair};
use crate::losses::{
    discriminator_loss, generator_loss, mse_loss, perceptual_loss, ssim_loss, LossWeights,
    RandomFeatureNet,
};
use crate::models::{Discriminator, Generator, DEPTH_WINDOW};
use crate::CoreError;

// sub-stream tags so the two phases and the penalty draws never share a
// random sequence even under the same master seed
const STREAM_PRETRAIN_SAMPLER: u64 = 0x11;
const STREAM_WGAN_SAMPLER: u64 = 0x22;
const STREAM_PENALTY: u64 = 0x33;

/// Objective used for supervised pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainLoss {
    Mse,
    Ssim,
    Perceptual,
}

impl PretrainLoss {
    pub fn name(&self) -> &'static str {
        match self {
            PretrainLoss::Mse => "mse",
            PretrainLoss::Ssim => "ssim",
            PretrainLoss::Perceptual => "perceptual",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CoreError> {
        match s {
            "mse" => Ok(PretrainLoss::Mse),
            "ssim" => Ok(PretrainLoss::Ssim),
            "perceptual" => Ok(PretrainLoss::Perceptual),
            other => Err(CoreError::config(format!(
                "unknown pretraining loss {other:?} (expected mse, ssim or perceptual)"
            ))),
        }
    }
}

/// Draws matched low/normal patch batches from a set of volume pairs.
/// The draw order per patch is fixed — pair index, then z, y, x corner —
/// so a seed pins the whole sequence.
pub struct PatchSampler<'a> {
    pairs: &'a [VolumePair],
    size: [usize; 3],
    rng: ChaCha20Rng,
}

impl<'a> PatchSampler<'a> {
    pub fn new(pairs: &'a [VolumePair], size: [usize; 3], seed: u64) -> Result<Self, CoreError> {
        if pairs.is_empty() {
            return Err(CoreError::config("cannot sample patches from zero pairs"));
        }
        for (i, pair) in pairs.iter().enumerate() {
            let dims = pair.low.dims();
            if size.iter().zip(&dims).any(|(&s, &d)| s == 0 || s > d) {
                return Err(CoreError::config(format!(
                    "patch size {size:?} does not fit pair {i} with dims {dims:?}"
                )));
            }
        }
        Ok(PatchSampler { pairs, size, rng: ChaCha20Rng::seed_from_u64(seed) })
    }

    pub fn next_batch(&mut self, batch: usize) -> Result<(Tensor<f32>, Tensor<f32>), CoreError> {
        if batch == 0 {
            return Err(CoreError::config("batch size must be at least 1"));
        }
        let [d, h, w] = self.size;
        let mut low = Vec::with_capacity(batch * d * h * w);
        let mut normal = Vec::with_capacity(batch * d * h * w);
        for _ in 0..batch {
            let pair = &self.pairs[self.rng.gen_range(0..self.pairs.len())];
            let dims = pair.low.dims();
            let corner = [
                self.rng.gen_range(0..=dims[0] - d),
                self.rng.gen_range(0..=dims[1] - h),
                self.rng.gen_range(0..=dims[2] - w),
            ];
            low.extend(pair.low.slab(corner, self.size)?);
            normal.extend(pair.normal.slab(corner, self.size)?);
        }
        let shape = vec![batch, 1, d, h, w];
        Ok((Tensor::new(shape.clone(), low)?, Tensor::new(shape, normal)?))
    }
}

/// Which loop produced a step record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Critic,
    Generator,
}

/// One optimizer step. Only finite losses are ever recorded; a diverging
/// step sets the log's flag instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: Phase,
    pub step: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wasserstein: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse: Option<f64>,
}

/// Full history of a training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub diverged: bool,
    pub d_steps_total: usize,
    pub g_steps_total: usize,
    /// Wall-clock seconds. Not serialized, so logs of two identical runs
    /// compare byte for byte.
    #[serde(skip)]
    pub wall_s: f64,
}

// wall time is measurement noise, not part of a run's identity
impl PartialEq for TrainLog {
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps
            && self.diverged == other.diverged
            && self.d_steps_total == other.d_steps_total
            && self.g_steps_total == other.g_steps_total
    }
}

/// Settings for the supervised phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub loss: PretrainLoss,
    pub alpha: f64,
    pub batch: usize,
    pub steps: usize,
    pub patch: [usize; 3],
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            loss: PretrainLoss::Mse,
            alpha: 1e-4,
            batch: 8,
            steps: 0,
            patch: [DEPTH_WINDOW, 64, 64],
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CoreError::config("learning rate must be positive and finite"));
        }
        if self.batch == 0 {
            return Err(CoreError::config("batch size must be at least 1"));
        }
        if self.patch[0] != DEPTH_WINDOW {
            return Err(CoreError::config(format!(
                "training patches must span the {DEPTH_WINDOW}-slice window, got depth {}",
                self.patch[0]
            )));
        }
        Ok(())
    }
}

fn params_finite(values: &[Tensor<f32>]) -> bool {
    values.iter().all(|t| t.all_finite())
}

/// Supervised pretraining. Zero steps leaves the freshly built weights
/// untouched. On divergence the generator is restored to the last finite
/// state and the log is flagged.
pub fn pretrain_generator(
    gen: &mut Generator,
    pairs: &[VolumePair],
    cfg: &PretrainConfig,
) -> Result<TrainLog, CoreError> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let mut log = TrainLog::default();
    if cfg.steps == 0 {
        log.wall_s = start.elapsed().as_secs_f64();
        return Ok(log);
    }

    let mut sampler =
        PatchSampler::new(pairs, cfg.patch, derive_seed(cfg.seed, STREAM_PRETRAIN_SAMPLER))?;
    let extractor = RandomFeatureNet::default();
    let mut values: Vec<Tensor<f32>> = gen.params().iter().map(|p| p.value.clone()).collect();
    let mut adam = AdamState::new(AdamConfig::with_alpha(cfg.alpha), &values);
    // weights are only promoted to the rollback point once they have
    // produced a finite loss on a real batch
    let mut last_good = values.clone();

    for step in 0..cfg.steps {
        let (low, normal) = sampler.next_batch(cfg.batch)?;
        let g: Graph<f32> = Graph::new();
        let vars = gen.bind(&g, true);
        let x = g.constant(low);
        let y = g.constant(normal);
        let out = gen.forward(&g, &vars, x)?;
        let loss = match cfg.loss {
            PretrainLoss::Mse => mse_loss(&g, out, y)?,
            PretrainLoss::Ssim => ssim_loss(&g, out, y)?,
            PretrainLoss::Perceptual => perceptual_loss(&g, out, y, &extractor)?,
        };
        let value = g.value(loss).scalar()? as f64;
        if !value.is_finite() {
            gen.set_values(last_good)?;
            log.diverged = true;
            log.wall_s = start.elapsed().as_secs_f64();
            return Ok(log);
        }
        last_good = values.clone();
        let grads = g.backward(loss)?;
        adam.step(&mut values, &grads.ordered(&vars)?)?;
        if !params_finite(&values) {
            gen.set_values(last_good)?;
            log.diverged = true;
            log.wall_s = start.elapsed().as_secs_f64();
            return Ok(log);
        }
        gen.set_values(values.clone())?;
        log.steps.push(StepRecord {
            phase: Phase::Pretrain,
            step,
            loss: value,
            wasserstein: None,
            penalty: None,
            mse: None,
        });
        log.g_steps_total += 1;
    }
    log.wall_s = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Settings for the adversarial phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WganConfig {
    pub alpha: f64,
    pub batch: usize,
    pub g_steps: usize,
    pub d_steps_per_g: usize,
    pub weights: LossWeights,
    pub patch: [usize; 3],
    pub seed: u64,
}

impl Default for WganConfig {
    fn default() -> Self {
        WganConfig {
            alpha: 1e-5,
            batch: 8,
            g_steps: 0,
            d_steps_per_g: 4,
            weights: LossWeights::default(),
            patch: [DEPTH_WINDOW, 64, 64],
            seed: 0,
        }
    }
}

impl WganConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CoreError::config("learning rate must be positive and finite"));
        }
        if self.batch == 0 {
            return Err(CoreError::config("batch size must be at least 1"));
        }
        if self.patch[0] != DEPTH_WINDOW {
            return Err(CoreError::config(format!(
                "training patches must span the {DEPTH_WINDOW}-slice window, got depth {}",
                self.patch[0]
            )));
        }
        if self.d_steps_per_g == 0 && !self.weights.lambda_m.is_infinite() {
            return Err(CoreError::config(
                "adversarial training needs at least one critic step per generator step",
            ));
        }
        self.weights.validate()
    }
}

/// Adversarial training with gradient-penalty regularization. The critic
/// takes `d_steps_per_g` optimizer steps on fresh batches for every
/// generator step; an infinite pixel-loss weight reduces the whole run to
/// supervised updates and the critic is never touched.
pub fn train_wgan(
    gen: &mut Generator,
    critic: &mut Discriminator,
    pairs: &[VolumePair],
    cfg: &WganConfig,
) -> Result<TrainLog, CoreError> {
    cfg.validate()?;
    let window = critic.config().input_shape;
    if window != cfg.patch {
        return Err(CoreError::config(format!(
            "critic expects {window:?} windows but training patches are {:?}",
            cfg.patch
        )));
    }

    let start = std::time::Instant::now();
    let mut log = TrainLog::default();
    let mut sampler =
        PatchSampler::new(pairs, cfg.patch, derive_seed(cfg.seed, STREAM_WGAN_SAMPLER))?;
    let mut gp_rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_PENALTY));

    let mut g_values: Vec<Tensor<f32>> = gen.params().iter().map(|p| p.value.clone()).collect();
    let mut d_values: Vec<Tensor<f32>> = critic.params().iter().map(|p| p.value.clone()).collect();
    let mut adam_g = AdamState::new(AdamConfig::with_alpha(cfg.alpha), &g_values);
    let mut adam_d = AdamState::new(AdamConfig::with_alpha(cfg.alpha), &d_values);
    // rollback point: the last (generator, critic) pair that evaluated to
    // a finite loss together
    let mut snapshot = (g_values.clone(), d_values.clone());
    let skip_critic = cfg.weights.lambda_m.is_infinite();

    macro_rules! bail_diverged {
        () => {{
            gen.set_values(snapshot.0)?;
            critic.set_values(snapshot.1)?;
            log.diverged = true;
            log.wall_s = start.elapsed().as_secs_f64();
            return Ok(log);
        }};
    }

    for g_step in 0..cfg.g_steps {
        if !skip_critic {
            for _ in 0..cfg.d_steps_per_g {
                let (low, normal) = sampler.next_batch(cfg.batch)?;
                // the generator runs in its own graph, so the critic sees
                // denoised patches as plain data with no path back
                let fake_data = {
                    let g1: Graph<f32> = Graph::new();
                    let vars = gen.bind(&g1, false);
                    let x = g1.constant(low);
                    g1.value(gen.forward(&g1, &vars, x)?)
                };
                let g2: Graph<f32> = Graph::new();
                let dvars = critic.bind(&g2, true);
                let fake = g2.constant(fake_data);
                let real = g2.constant(normal);
                let score = |gr: &Graph<f32>, v: Var| critic.forward(gr, &dvars, v);
                let out =
                    discriminator_loss(&g2, &score, fake, real, &cfg.weights, &mut gp_rng)?;
                let value = g2.value(out.total).scalar()? as f64;
                if !value.is_finite() {
                    bail_diverged!();
                }
                snapshot = (g_values.clone(), d_values.clone());
                let grads = g2.backward(out.total)?;
                adam_d.step(&mut d_values, &grads.ordered(&dvars)?)?;
                if !params_finite(&d_values) {
                    bail_diverged!();
                }
                critic.set_values(d_values.clone())?;
                log.steps.push(StepRecord {
                    phase: Phase::Critic,
                    step: log.d_steps_total,
                    loss: value,
                    wasserstein: Some(out.wasserstein),
                    penalty: Some(out.penalty),
                    mse: None,
                });
                log.d_steps_total += 1;
            }
        }

        let (low, normal) = sampler.next_batch(cfg.batch)?;
        let g: Graph<f32> = Graph::new();
        let gvars = gen.bind(&g, true);
        let dvars = critic.bind(&g, false);
        let x = g.constant(low);
        let y = g.constant(normal);
        let fake = gen.forward(&g, &gvars, x)?;
        let score = |gr: &Graph<f32>, v: Var| critic.forward(gr, &dvars, v);
        let out = generator_loss(&g, &score, fake, y, &cfg.weights)?;
        let value = g.value(out.total).scalar()? as f64;
        if !value.is_finite() {
            bail_diverged!();
        }
        snapshot = (g_values.clone(), d_values.clone());
        let grads = g.backward(out.total)?;
        adam_g.step(&mut g_values, &grads.ordered(&gvars)?)?;
        if !params_finite(&g_values) {
            bail_diverged!();
        }
        gen.set_values(g_values.clone())?;
        log.steps.push(StepRecord {
            phase: Phase::Generator,
            step: g_step,
            loss: value,
            wasserstein: None,
            penalty: None,
            mse: Some(out.mse),
        });
        log.g_steps_total += 1;
    }
    log.wall_s = start.elapsed().as_secs_f64();
    Ok(log)
}
