//! Adam with L2 decay, restricted to a per-tensor mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParameters, ParamId};

/// One enable flag per learnable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterMask {
    flags: [bool; 12],
}

impl ParameterMask {
    pub fn all() -> Self {
        Self { flags: [true; 12] }
    }

    pub fn none() -> Self {
        Self { flags: [false; 12] }
    }

    pub fn from_fn(f: impl Fn(ParamId) -> bool) -> Self {
        let mut flags = [false; 12];
        for id in ParamId::ALL {
            flags[id.index()] = f(id);
        }
        Self { flags }
    }

    pub fn is_enabled(&self, id: ParamId) -> bool {
        self.flags[id.index()]
    }

    pub fn set(&mut self, id: ParamId, enabled: bool) {
        self.flags[id.index()] = enabled;
    }

    pub fn enabled(&self) -> impl Iterator<Item = ParamId> + '_ {
        ParamId::ALL.into_iter().filter(|&id| self.is_enabled(id))
    }

    pub fn count_enabled(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

impl Default for ParameterMask {
    fn default() -> Self {
        Self::all()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// L2 coefficient added to the gradient as `λ·θ`.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Validation(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Validation("Adam betas must lie in (0,1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// First/second moment accumulators mirroring a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: ModelParameters,
    second: ModelParameters,
}

impl OptimizerState {
    pub fn new(params: &ModelParameters, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: ModelParameters::zeros(params.signature()),
            second: ModelParameters::zeros(params.signature()),
        })
    }

    pub fn first_moment(&self) -> &ModelParameters {
        &self.first
    }

    pub fn second_moment(&self) -> &ModelParameters {
        &self.second
    }
}

/// One bias-corrected Adam update of every mask-enabled tensor.
///
/// Disabled tensors and their accumulators are left untouched. The step
/// counter advances once per call.
pub fn adam_step(
    params: &mut ModelParameters,
    grads: &ModelParameters,
    state: &mut OptimizerState,
    mask: &ParameterMask,
) -> Result<()> {
    params.check_same_signature(grads)?;
    params.check_same_signature(&state.first)?;
    state.config.validate()?;

    state.step += 1;
    let AdamConfig {
        learning_rate: lr,
        weight_decay: lambda,
        beta1: b1,
        beta2: b2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    let OptimizerState { first, second, .. } = state;
    for id in mask.enabled() {
        let g = grads.tensor(id);
        let m = first.tensor_mut(id);
        let v = second.tensor_mut(id);
        let theta = params.tensor_mut(id);
        for i in 0..theta.len() {
            let gi = g[i] + lambda * theta[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        crate::tensor::check_finite(id.name(), params.tensor(id))?;
    }
    Ok(())
}
