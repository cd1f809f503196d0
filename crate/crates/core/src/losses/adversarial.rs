use rand::Rng;
use voxdn_tensor::{Element, Graph, Var};

use super::fidelity::mse_loss;
use super::LossWeights;
use crate::CoreError;

/// Anything that scores a batch: takes the graph and a [B, 1, D, H, W] input,
/// returns per-sample scores ([B] or [B, 1]).
pub type Critic<'a, E> = dyn Fn(&Graph<E>, Var) -> Result<Var, CoreError> + 'a;

/// Per-sample convex mix with the given coefficients on the first operand:
/// out_b = eps_b * a_b + (1 - eps_b) * b_b.
pub fn interpolate_with<E: Element>(
    g: &Graph<E>,
    a: Var,
    b: Var,
    eps: &[E],
) -> Result<Var, CoreError> {
    let complement: Vec<E> = eps.iter().map(|&e| E::from_f64(1.0) - e).collect();
    let left = g.per_sample_scale(a, eps.to_vec())?;
    let right = g.per_sample_scale(b, complement)?;
    Ok(g.add(left, right)?)
}

/// Random point on the segment between each fake/real sample pair, one
/// uniform draw per batch element.
pub fn interpolate_samples<E: Element>(
    g: &Graph<E>,
    fake: Var,
    real: Var,
    rng: &mut impl Rng,
) -> Result<Var, CoreError> {
    let shape = g.shape_of(fake);
    if shape != g.shape_of(real) {
        return Err(CoreError::config(format!(
            "interpolation shapes differ: {shape:?} vs {:?}",
            g.shape_of(real)
        )));
    }
    if shape.is_empty() || shape[0] == 0 {
        return Err(CoreError::config("cannot interpolate an empty batch".to_string()));
    }
    let eps: Vec<E> = (0..shape[0]).map(|_| E::from_f64(rng.gen_range(0.0..1.0))).collect();
    interpolate_with(g, fake, real, &eps)
}

/// lambda_gp * mean over the batch of (||grad of the critic's score w.r.t.
/// its input||_2 - 1)^2. Differentiates through the gradient, so the result
/// still carries second-order credit back to the critic's parameters.
pub fn gradient_penalty<E: Element>(
    g: &Graph<E>,
    critic: &Critic<E>,
    v_hat: Var,
    lambda_gp: f64,
) -> Result<Var, CoreError> {
    let batch = g.shape_of(v_hat)[0];
    let scores = critic(g, v_hat)?;
    // summing first leaves each sample's gradient untouched (scores are
    // per-sample, so cross terms are zero)
    let total = g.sum(scores);
    let gx = g.grad(total, v_hat)?;
    let norm = g.sqrt(g.sum_per_sample(g.mul(gx, gx)?)?);
    let excess = g.add_scalar(norm, E::from_f64(-1.0));
    let sum_sq = g.sum(g.mul(excess, excess)?);
    Ok(g.scale(sum_sq, E::from_f64(lambda_gp / batch as f64)))
}

pub struct DiscriminatorLoss {
    pub total: Var,
    pub wasserstein: f64,
    pub penalty: f64,
}

/// Critic objective: E[D(fake)] - E[D(real)] + gradient penalty. The fake
/// batch must already be detached (bound as a constant) so no credit flows
/// back into the generator.
pub fn discriminator_loss<E: Element>(
    g: &Graph<E>,
    critic: &Critic<E>,
    fake: Var,
    real: Var,
    weights: &LossWeights,
    rng: &mut impl Rng,
) -> Result<DiscriminatorLoss, CoreError> {
    weights.validate()?;
    let shape = g.shape_of(fake);
    if shape != g.shape_of(real) {
        return Err(CoreError::config(format!(
            "fake and real batches differ: {shape:?} vs {:?}",
            g.shape_of(real)
        )));
    }
    let mean_fake = g.mean(critic(g, fake)?);
    let mean_real = g.mean(critic(g, real)?);
    let wasserstein = g.sub(mean_fake, mean_real)?;
    let v_hat = interpolate_samples(g, fake, real, rng)?;
    let penalty = gradient_penalty(g, critic, v_hat, weights.lambda_gp)?;
    let total = g.add(wasserstein, penalty)?;
    Ok(DiscriminatorLoss {
        total,
        wasserstein: g.value(wasserstein).scalar()?.to_f64(),
        penalty: g.value(penalty).scalar()?.to_f64(),
    })
}

pub struct GeneratorLoss {
    pub total: Var,
    pub adversarial: f64,
    pub mse: f64,
}

/// Generator objective: -E[D(fake)] + lambda_m * MSE(fake, real). The
/// lambda_m = inf sentinel drops the adversarial term (and never calls the
/// critic); lambda_m = 0 drops the fidelity term from the total.
pub fn generator_loss<E: Element>(
    g: &Graph<E>,
    critic: &Critic<E>,
    fake: Var,
    real: Var,
    weights: &LossWeights,
) -> Result<GeneratorLoss, CoreError> {
    weights.validate()?;
    let shape = g.shape_of(fake);
    if shape != g.shape_of(real) {
        return Err(CoreError::config(format!(
            "fake and real batches differ: {shape:?} vs {:?}",
            g.shape_of(real)
        )));
    }
    let mse = mse_loss(g, fake, real)?;
    let mse_value = g.value(mse).scalar()?.to_f64();
    if weights.lambda_m.is_infinite() {
        return Ok(GeneratorLoss { total: mse, adversarial: 0.0, mse: mse_value });
    }
    let adversarial = g.scale(g.mean(critic(g, fake)?), E::from_f64(-1.0));
    let adv_value = g.value(adversarial).scalar()?.to_f64();
    let total = if weights.lambda_m == 0.0 {
        adversarial
    } else {
        g.add(adversarial, g.scale(mse, E::from_f64(weights.lambda_m)))?
    };
    Ok(GeneratorLoss { total, adversarial: adv_value, mse: mse_value })
}
