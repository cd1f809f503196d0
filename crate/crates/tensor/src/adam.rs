use crate::error::TensorError;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { alpha: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        AdamConfig { alpha, ..AdamConfig::default() }
    }
}

/// Adam state aligned to one fixed parameter list. Moments and the update
/// arithmetic run in f64 regardless of the parameter element type, so f32
/// training does not lose the bias-correction precision early on.
pub struct AdamState {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<E: Element>(cfg: AdamConfig, params: &[Tensor<E>]) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        AdamState { cfg, t: 0, m, v }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update over the whole parameter list. `params` and `grads` must
    /// match the list the state was built for, in order.
    pub fn step<E: Element>(
        &mut self,
        params: &mut [Tensor<E>],
        grads: &[Tensor<E>],
    ) -> Result<(), TensorError> {
        if params.len() != self.m.len() {
            return Err(TensorError::ParamCount { expected: self.m.len(), got: params.len() });
        }
        if grads.len() != self.m.len() {
            return Err(TensorError::ParamCount { expected: self.m.len(), got: grads.len() });
        }
        for (param, grad) in params.iter().zip(grads) {
            if param.shape() != grad.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    left: param.shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let corr1 = 1.0 - b1.powi(self.t as i32);
        let corr2 = 1.0 - b2.powi(self.t as i32);
        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut next = Vec::with_capacity(param.numel());
            for (j, (&p, &g)) in param.data().iter().zip(grad.data()).enumerate() {
                let g = g.to_f64();
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let mhat = m[j] / corr1;
                let vhat = v[j] / corr2;
                let upd = self.cfg.alpha * mhat / (vhat.sqrt() + self.cfg.eps);
                next.push(E::from_f64(p.to_f64() - upd));
            }
            *param = Tensor::new(param.shape().to_vec(), next).expect("adam preserves shape");
        }
        Ok(())
    }
}
