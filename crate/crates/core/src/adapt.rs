//! Per-patient online fine-tuning under an exponentially discounted loss.
//!
//! At step `t` the patient-specific model starts as a copy of the
//! population model and is refit to the observed history with
//!
//! ```text
//! L*_t = Σ_{i=1}^{t−1} e(y′_{i+1}, ŷ′_{i+1}) · exp(−|t − i| / γ)
//! ```
//!
//! taking one full-history Adam step per epoch until the loss stops improving
//! by at least `ε` or the epoch cap is hit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::History;
use crate::error::{Error, Result};
use crate::model::{backward_history, step_losses, ModelParameters, ParamId};
use crate::optim::{adam_step, AdamConfig, OptimizerState, ParameterMask};

/// Which parameter subset adaptation may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaskMode {
    All,
    OutputOnly,
    TransitionOnly,
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::All => "ALL",
            MaskMode::OutputOnly => "OUTPUT_ONLY",
            MaskMode::TransitionOnly => "TRANSITION_ONLY",
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "ALL" => Ok(MaskMode::All),
            "OUTPUT_ONLY" => Ok(MaskMode::OutputOnly),
            "TRANSITION_ONLY" => Ok(MaskMode::TransitionOnly),
            other => Err(Error::Validation(format!("unknown mask mode {other:?}"))),
        }
    }
}

pub fn build_mask(mode: MaskMode) -> ParameterMask {
    match mode {
        MaskMode::All => ParameterMask::all(),
        MaskMode::OutputOnly => ParameterMask::from_fn(ParamId::is_output),
        MaskMode::TransitionOnly => ParameterMask::from_fn(ParamId::is_transition),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    /// Decay bandwidth of the history kernel.
    pub gamma: f64,
    /// Minimum per-epoch improvement to keep going.
    pub epsilon: f64,
    pub learning_rate: f64,
    pub mask: MaskMode,
    pub max_epochs: usize,
    /// Start each step from the previous step's patient model instead of the
    /// population model. Only the evaluation driver reads this flag.
    pub warm_start: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            gamma: 3.0,
            epsilon: 1e-4,
            learning_rate: 0.005,
            mask: MaskMode::All,
            max_epochs: 50,
            warm_start: false,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Validation(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Validation(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Validation("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    EpochCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTrace {
    /// `L*_t(τ)` for τ = 1..=epochs, each measured before that epoch's update.
    pub losses: Vec<f64>,
    pub termination: Termination,
    pub epochs: usize,
    pub optimizer_steps: usize,
}

impl AdaptationTrace {
    /// `epoch,loss,improvement` rows; the first improvement is blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,improvement\n");
        for (i, l) in self.losses.iter().enumerate() {
            let imp = if i == 0 {
                String::new()
            } else {
                (self.losses[i - 1] - l).to_string()
            };
            out.push_str(&format!("{},{},{}\n", i + 1, l, imp));
        }
        out
    }
}

/// `K(t, i) = exp(−|t − i| / γ)`
pub fn decay_weight(t: usize, i: usize, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::Validation(format!("gamma must be positive, got {gamma}")));
    }
    if t == 0 || i == 0 {
        return Err(Error::Validation("step indices are 1-based".into()));
    }
    Ok((-(t.abs_diff(i) as f64) / gamma).exp())
}

/// Kernel weights `K(t, i)` for `i = 1..t−1`.
pub fn history_weights(t: usize, gamma: f64) -> Result<Vec<f64>> {
    (1..t).map(|i| decay_weight(t, i, gamma)).collect()
}

fn require_history(history: &History<'_>) -> Result<()> {
    if history.t() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            have: history.t(),
        });
    }
    Ok(())
}

/// Discounted sum of per-step losses, given precomputed per-step losses
/// `e_i` for `i = 1..t−1`.
pub fn discount(step_losses: &[f64], gamma: f64) -> Result<f64> {
    let t = step_losses.len() + 1;
    let w = history_weights(t, gamma)?;
    Ok(step_losses.iter().zip(&w).map(|(e, k)| e * k).sum())
}

/// `L*_t` of `model` over the observed pairs of `history`.
pub fn discounted_loss(model: &ModelParameters, history: &History<'_>, gamma: f64) -> Result<f64> {
    require_history(history)?;
    discount(&step_losses(model, history)?, gamma)
}

/// Fine-tunes a copy of `population` on `history`.
pub fn adapt(
    population: &ModelParameters,
    history: &History<'_>,
    config: &AdaptationConfig,
) -> Result<(ModelParameters, AdaptationTrace)> {
    adapt_from(population, history, config)
}

/// As [`adapt`], starting from an arbitrary initial model (warm start).
///
/// Each epoch measures `L*_t(τ)` and its gradient at the current parameters.
/// If `L*_t(τ−1) − L*_t(τ) < ε` the loop stops and the just-measured model is
/// returned; otherwise one masked Adam step is taken. Optimizer moments start
/// fresh on every call.
pub fn adapt_from(
    initial: &ModelParameters,
    history: &History<'_>,
    config: &AdaptationConfig,
) -> Result<(ModelParameters, AdaptationTrace)> {
    config.validate()?;
    require_history(history)?;
    let sig = initial.signature();
    if let (Some(x), Some(y)) = (history.inputs.first(), history.targets.first()) {
        if x.len() != sig.n_inputs || y.len() != sig.n_targets {
            return Err(Error::dim(
                "history widths vs model signature",
                (sig.n_inputs, sig.n_targets),
                (x.len(), y.len()),
            ));
        }
    }

    let weights = history_weights(history.t(), config.gamma)?;
    let mask = crate::adapt::build_mask(config.mask);
    let mut model = initial.clone();
    let mut state = OptimizerState::new(&model, AdamConfig::new(config.learning_rate, 0.0))?;
    let mut losses = Vec::new();
    let mut previous = f64::INFINITY;
    let mut termination = Termination::EpochCap;
    let mut steps = 0;

    for epoch in 1..=config.max_epochs {
        let b = backward_history(&model, history, &weights, &mask)
            .map_err(|e| Error::Numeric(format!("adaptation epoch {epoch}: {e}")))?;
        losses.push(b.loss);
        if previous - b.loss < config.epsilon {
            termination = Termination::Converged;
            break;
        }
        previous = b.loss;
        adam_step(&mut model, &b.grads, &mut state, &mask)
            .map_err(|e| Error::Numeric(format!("adaptation epoch {epoch}: {e}")))?;
        steps += 1;
    }

    Ok((
        model,
        AdaptationTrace {
            epochs: losses.len(),
            losses,
            termination,
            optimizer_steps: steps,
        },
    ))
}
