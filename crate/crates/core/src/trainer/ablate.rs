use serde::{Deserialize, Serialize};

use super::{
    denoise_volume, pretrain_generator, train_wgan, PretrainConfig, PretrainLoss, WganConfig,
};
use crate::data::{derive_seed, VolumePair};
use crate::losses::LossWeights;
use crate::metrics::{evaluate_volume, MetricReport};
use crate::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::CoreError;

/// How one ablation row gets its weights.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainMethod {
    /// Score the low-dose input as-is; no model involved.
    Baseline,
    /// Supervised training with one fidelity objective.
    Supervised(PretrainLoss),
    /// Adversarial training, optionally initialized from a supervised
    /// phase run under `pretrain` first.
    Adversarial { pretrain: Option<PretrainLoss>, weights: LossWeights },
}

/// One candidate in an ablation sweep.
#[derive(Debug, Clone)]
pub struct AblationSpec {
    pub config: GeneratorConfig,
    pub method: TrainMethod,
}

/// Budget shared by every row, so candidates compete under the same rules.
/// The critic's input shape must match `wgan.patch`.
#[derive(Debug, Clone)]
pub struct AblationBudget {
    pub pretrain: PretrainConfig,
    pub wgan: WganConfig,
    pub critic: DiscriminatorConfig,
    pub stride_z: usize,
}

/// Outcome of one row: what was trained, how, and how it scored on the
/// held-out pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    /// Generator variant name, or "-" for the untrained baseline.
    pub structure: String,
    pub skips: String,
    pub loss: String,
    pub method: String,
    pub parameters: usize,
    pub diverged: bool,
    /// Absent when a run diverged before it could be scored.
    pub report: Option<MetricReport>,
}

// every adversarial row draws the same critic init, so rows differ only in
// what the row deliberately varies
const STREAM_ABLATION_CRITIC: u64 = 0xD;

pub fn run_ablation(
    specs: &[AblationSpec],
    train: &[VolumePair],
    held_out: &VolumePair,
    budget: &AblationBudget,
) -> Result<Vec<AblationRow>, CoreError> {
    specs.iter().map(|spec| run_row(spec, train, held_out, budget)).collect()
}

fn skips_of(config: &GeneratorConfig) -> String {
    config.skip_plan.iter().map(|(s, t)| format!("{s}>{t}")).collect::<Vec<_>>().join(" ")
}

fn adversarial_loss_name(weights: &LossWeights) -> &'static str {
    if weights.lambda_m == 0.0 {
        "adversarial"
    } else if weights.lambda_m.is_infinite() {
        "mse"
    } else {
        "adversarial+mse"
    }
}

fn run_row(
    spec: &AblationSpec,
    train: &[VolumePair],
    held_out: &VolumePair,
    budget: &AblationBudget,
) -> Result<AblationRow, CoreError> {
    let (gen, diverged, loss, method) = match &spec.method {
        TrainMethod::Baseline => {
            let report = evaluate_volume(&held_out.low, &held_out.normal)?;
            return Ok(AblationRow {
                structure: "-".to_string(),
                skips: String::new(),
                loss: "-".to_string(),
                method: "-".to_string(),
                parameters: 0,
                diverged: false,
                report: Some(report),
            });
        }
        TrainMethod::Supervised(loss) => {
            let mut gen = Generator::build(spec.config.clone(), budget.pretrain.seed)?;
            let cfg = PretrainConfig { loss: *loss, ..budget.pretrain.clone() };
            let log = pretrain_generator(&mut gen, train, &cfg)?;
            (gen, log.diverged, loss.name().to_string(), "direct".to_string())
        }
        TrainMethod::Adversarial { pretrain, weights } => {
            let mut gen = Generator::build(spec.config.clone(), budget.pretrain.seed)?;
            let mut diverged = false;
            if let Some(loss) = pretrain {
                let cfg = PretrainConfig { loss: *loss, ..budget.pretrain.clone() };
                diverged |= pretrain_generator(&mut gen, train, &cfg)?.diverged;
            }
            let mut critic = Discriminator::build(
                budget.critic.clone(),
                derive_seed(budget.wgan.seed, STREAM_ABLATION_CRITIC),
            )?;
            let cfg = WganConfig { weights: *weights, ..budget.wgan.clone() };
            diverged |= train_wgan(&mut gen, &mut critic, train, &cfg)?.diverged;
            let method = match pretrain {
                None => "direct".to_string(),
                Some(l) => format!("transfer({})", l.name()),
            };
            (gen, diverged, adversarial_loss_name(weights).to_string(), method)
        }
    };

    let report = if diverged {
        None
    } else {
        let denoised = denoise_volume(&gen, &held_out.low, budget.stride_z)?;
        Some(evaluate_volume(&denoised, &held_out.normal)?)
    };
    Ok(AblationRow {
        structure: spec.config.variant.name().to_string(),
        skips: skips_of(&spec.config),
        loss,
        method,
        parameters: gen.count_parameters(),
        diverged,
        report,
    })
}
